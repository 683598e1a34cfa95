"""Prompt templates for every model-facing step.

Only the output contracts are load-bearing for the parsers: JSON shapes, the
``<fact>``/``<scope>`` tags, the plan headings and ``## Code: [file]``
blocks. Changing any template text changes transcript keys, so recorded
fixtures must be regenerated afterwards.
"""

from __future__ import annotations

from typing import Sequence

ASPECTS = ("data", "model", "training", "evaluation")

ASPECT_FOCUS = {
    "data": "datasets, tasks, splits, preprocessing, augmentation and data loading",
    "model": "architecture, layers, modules, parameterisation and any equations defining the model",
    "training": "objectives and losses, optimisers, schedules, hyper-parameters and the training procedure",
    "evaluation": "metrics, evaluation protocols, baselines that must be run and reported quantities",
}

# ---------------------------------------------------------------------------
# supervisory signal

FRAMEWORK_SYSTEM = """You help engineers re-implement machine learning papers. Read the input paper and list the key components a faithful implementation needs for ONE aspect of the work.

For each component, quote the sentence(s) or the short passage of the input paper that introduces it. Keep quotes verbatim where possible; one component per list entry.

Respond with ONLY a JSON array of strings. If the input paper says nothing about this aspect, respond with []."""


def framework_user(aspect: str, paper_text: str) -> str:
    return (
        f"Aspect: {aspect} ({ASPECT_FOCUS[aspect]}).\n\n"
        f"Paper:\n---\n{paper_text}\n---\n\n"
        f"List the {aspect} components as a JSON array of strings."
    )


CONFIGURATION_SYSTEM = """You help engineers re-implement machine learning papers. Extract every concrete configuration detail stated in the input paper: hyper-parameter values, dimensions, counts, thresholds, seeds, schedules, dataset sizes, library or hardware requirements.

For each detail give the configuration name and the phrase or short sentence of the input paper that states it.

Respond with ONLY a JSON array of objects, each {"name": "...", "phrase": "..."}. If there are none, respond with []."""


def configuration_user(paper_text: str) -> str:
    return f"Paper:\n---\n{paper_text}\n---\n\nReturn the configuration details as a JSON array."


GUIDE_EXTRACTION_SYSTEM = """You are a careful test engineer with a machine learning background. We are building a checklist of facts that a code base must satisfy to count as a faithful reproduction of a research paper.

You will see one paragraph of the input paper with numbered sentences, preceded by a few earlier paragraphs for context. Select every sentence of the numbered paragraph that carries a concrete, code-level detail, such as:
- datasets, benchmarks and tasks;
- data splits, normalisation or augmentation;
- hyper-parameter values (learning rate, batch size, optimiser, epochs);
- architecture and components;
- algorithmic steps and formulas;
- loss functions;
- evaluation metrics.

Skip sentences that only make high-level claims, discuss results qualitatively, describe future work, cite related work or give general background.

Output ONLY a JSON array of the selected sentence numbers. If no sentence qualifies, output [].

Example paragraph:
[1]: We fine-tune a ResNet-50 on ImageNet for 90 epochs.
[2]: This gives a strong baseline.
[3]: The batch size is 256 and the initial learning rate is 0.1.
[4]: We report top-1 accuracy on the validation split.
[5]: Other backbones are left for future work.
Expected output: [1,3,4]"""


def guide_extraction_user(context: Sequence[str], indexed_paragraph: str) -> str:
    ctx = "\n\n".join(context) if context else "(start of paper)"
    return (
        f"Earlier paragraphs (context only, do not select from these):\n---\n{ctx}\n---\n\n"
        f"Paragraph:\n{indexed_paragraph}\n\nSelected sentence numbers:"
    )


GROUNDING_SYSTEM = """You link extracted notes back to the exact sentences of a research paper they come from.

You will see a note and numbered sentences taken from the input paper paragraphs most similar to it. Select the numbers of the sentences that state what the note says. Prefer sentences from a single paragraph.

Output ONLY a JSON array of sentence numbers, or [] if none of the sentences support the note."""


def grounding_user(unit_text: str, numbered_paragraphs: Sequence[tuple[int, str]]) -> str:
    blocks = "\n\n".join(f"Paragraph {rank}:\n{text}" for rank, text in numbered_paragraphs)
    return f"Note:\n{unit_text}\n\nCandidate sentences:\n{blocks}\n\nSupporting sentence numbers:"


STANDARDIZE_SYSTEM = """You turn notes about a research paper into atomic, verifiable implementation requirements that a code reviewer can check by reading code and configuration files, without running experiments.

1. Decompose the note into every distinct claim.
   - Keep self-contained equations and algorithms whole: a loss function or update rule is ONE requirement containing the full formula. Never split a formula into its terms.
   - Split everything else into the smallest meaningful facts: datasets and tasks, data handling, each configuration value, architectural components, computational steps, evaluation metrics, required packages or hardware.
2. Write one requirement per fact as a fluent sentence (one or two sentences for complex topics). Mark the checkable claim with <fact>...</fact> and the context where it holds (dataset, task, phase, experiment) with <scope>...</scope>. Each requirement has exactly one <fact> span and at most one <scope> span.

Output ONLY a JSON list of objects, each with a single "criterion" key.

Example
Note: "Both encoders use 6 layers with hidden size 512 when trained on WMT14."
Output:
[
  {"criterion": "The encoders use <fact>6 layers</fact> <scope>when trained on WMT14</scope>."},
  {"criterion": "A <fact>hidden size of 512</fact> is used in the encoders <scope>when trained on WMT14</scope>."}
]"""


def standardize_user(unit_text: str, reference: str | None) -> str:
    ref = reference if reference else "(no reference sentence located)"
    return f'Note: "{unit_text}"\nReference sentence(s): "{ref}"\n\nRequirements (JSON list):'


FILTER_SYSTEM = """You curate a checklist used to review a code base against a research paper. The numbered requirements below were grouped because their <fact> parts are similar.

Select the smallest set of requirements that still covers every distinct, verifiable implementation detail in the group:
1. Treat requirements that say the same thing in both fact and scope as one meaning, even when worded differently.
2. From each distinct meaning keep the single best requirement: directly checkable in code or config first, then precise values and actions, then complete and clearly written.
3. Keep several requirements only when they describe genuinely different details (for example different values for different training phases). Never keep duplicates. Select at most five.

Respond with ONLY a JSON object: {"selected_indices": [1-based numbers], "reason": "short justification"}."""


def filter_user(rendered: Sequence[str]) -> str:
    lines = "\n".join(f"{k}. {r}" for k, r in enumerate(rendered, start=1))
    return f"Requirements:\n{lines}\n\nYour selection:"


# ---------------------------------------------------------------------------
# initial implementation

SKELETON_SYSTEM = """You are a machine learning engineer laying out the code structure for reproducing a research paper. You get the input paper's key components grouped by data, model, training and evaluation, plus configuration details.

Write ONE Python script that contains only structure:
1. Four classes named Data, Model, Trainer and Evaluator. Give each a class docstring describing its constructor arguments, its methods and what they do.
2. Imports of the packages the implementation will need at the top of the file. If two libraries have overlapping roles, add a short trailing comment saying what each is for.
3. A main() function that will run the overall workflow.
4. An optional `if __name__ == "__main__":` block that only calls main().
5. Bodies of every function and method consist of a docstring (with numbered implementation steps where useful) followed by `pass`. Write no implementation code at all.

Reply with only the code in a single ```python fenced block."""


def skeleton_user(framework: dict[str, Sequence[str]], configuration: Sequence[str]) -> str:
    parts = []
    for aspect in ASPECTS:
        items = framework.get(aspect) or []
        body = "\n".join(f"- {t}" for t in items) if items else "- (nothing extracted)"
        parts.append(f"## {aspect.capitalize()}\n{body}")
    cfg = "\n".join(f"- {t}" for t in configuration) if configuration else "- (none)"
    return "\n\n".join(parts) + f"\n\n## Configuration details\n{cfg}\n\nWrite the code skeleton."


FILL_SYSTEM = """You are a machine learning engineer implementing one part of a code skeleton for a paper reproduction. Across several turns you receive one target class or function at a time, together with the input paper, the extracted configuration details, the YAML configuration and the current state of the script.

Rules:
- You are given the list of imports already present. Do not change or drop any of them. Put only NEW imports your code needs at the very top of your reply.
- Keep the names and signatures of the skeleton. Do not add or remove functions of the skeleton.
- Write complete, working code. No placeholders, no TODO comments, no stand-in implementations.

Reply with only the code (new imports followed by the full definition of the target) in a single ```python fenced block."""


def fill_user(
    paper_text: str,
    configuration: Sequence[str],
    config_yaml: str,
    current_code: str,
    target_source: str,
    imports: Sequence[str],
) -> str:
    cfg = "\n".join(f"- {t}" for t in configuration) if configuration else "- (none)"
    imported = "\n".join(imports) if imports else "(none)"
    return (
        f"Paper:\n---\n{paper_text}\n---\n\n"
        f"Configuration details:\n{cfg}\n\n"
        f"config.yaml:\n```yaml\n{config_yaml}```\n\n"
        f"Current script:\n```python\n{current_code}```\n\n"
        f"Imports already present:\n{imported}\n\n"
        f"Target to implement:\n```python\n{target_source}\n```"
    )


# ---------------------------------------------------------------------------
# reflection

VERIFY_SYSTEM = """You grade an attempt to reproduce a research paper in code. The input paper is the ground truth. The submission is a set of files. Grading is done against a checklist of fine-grained requirements; you check exactly ONE of them.

Answer in three parts, briefly:

### Expected Implementation
Two or three sentences on what a correct implementation of the requirement contains.

### Actual Findings
Two or three sentences on the relevant code, compared with your expectation.

### Verification Result
A line `score: 1` (requirement met) or `score: 0` (not met), then two or three sentences of reasoning.

Always give a score. Anything missing from the submission counts as not implemented. Be strict, but judge only this requirement."""


def verify_user(paper_text: str, workspace_text: str, criterion: str) -> str:
    return (
        f"Paper:\n---\n{paper_text}\n---\n\n"
        f"Submission:\n{workspace_text}\n\n"
        f"Requirement to check:\n{criterion}"
    )


PLAN_SYSTEM = """You are a lead engineer. Turn a code review report and the code it refers to into a short, ordered action plan a developer can follow.

Structure the plan in two parts:
- Under the heading `### CONFIG_PLAN`, number the changes to `config.yaml`. If none are needed, write "No changes needed for config.yaml".
- Under the heading `### CODE_PLAN`, group the changes to Python files by file, each under its own `## Code: [filename]` sub-heading, as numbered steps.

Describe changes only; do not write the code.

Example:
### CONFIG_PLAN
1. Under `optimizer`, set `weight_decay` to 0.05.

### CODE_PLAN
## Code: [train.py]
1. In `Trainer.step`, clip gradients to norm 1.0 before the optimiser step."""


def plan_user(feedback: str, workspace_text: str) -> str:
    return (
        f"Review report (failed requirements):\n---\n{feedback}\n---\n\n"
        f"Current project:\n---\n{workspace_text}\n---\n\n"
        "Write the plan."
    )


REFINE_SYSTEM = """You are a senior engineer applying a revision plan to a multi-file Python research project.

Code requirements:
- Clean, modular code that follows the input paper's method, setup and metrics.
- Complete implementations only; no TODO comments or placeholders.
- Give every setting a default value and use explicit, typed variables. Import everything you use and avoid circular imports.
- Keep the existing design and interfaces; do not call methods that do not exist.
- Take settings from config.yaml where they exist; do not invent new values.

Editing style: make the smallest change that carries out each step, in the order of the plan, file by file. Leave unrelated code, comments and structure untouched; think of your reply as a patch, not a rewrite.

Output: return the complete content of EVERY file of the project, including unchanged ones and config.yaml. Each file starts with a line `## Code: [filename]` followed by one fenced code block with the full file."""


def refine_user(paper_text: str, workspace_text: str, plan_text: str) -> str:
    return (
        f"Paper:\n---\n{paper_text}\n---\n\n"
        f"Current project files:\n{workspace_text}\n\n"
        f"Revision plan:\n---\n{plan_text}\n---\n\n"
        "Return all files."
    )


MATCH_SYSTEM = """You compare two checklists for the same research paper: official rubric requirements and automatically extracted criteria.

For every numbered criterion, decide which rubric requirements (if any) it matches, meaning that checking the criterion checks the same implementation detail as the requirement, or a part of it.

Respond with ONLY a JSON object {"matches": [{"criterion": <criterion number>, "requirements": [<requirement numbers>]}, ...]} with one entry per criterion; use an empty list when a criterion matches nothing."""


def match_user(requirements: Sequence[str], criteria: Sequence[str]) -> str:
    reqs = "\n".join(f"R{k}. {t}" for k, t in enumerate(requirements, start=1))
    crit = "\n".join(f"{k}. {t}" for k, t in enumerate(criteria, start=1))
    return f"Rubric requirements:\n{reqs}\n\nCriteria:\n{crit}\n\nMatches (requirement numbers without the R prefix):"
