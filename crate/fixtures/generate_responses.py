"""Writes the canned model responses for the repair and batch fixtures.

Run from the fixtures directory, then turn the responses into transcripts:

    python3 generate_responses.py
    cargo run --example author_fixtures -- repair_success repair_fail batch_50

Failing scripts exit through sys.exit(message) so the error text fed to the
repair stage does not depend on the interpreter's traceback format.
"""

import json
import os
import shutil

HERE = os.path.dirname(os.path.abspath(__file__))

CONFIG = """\
model = "gpt-4"
interpreter_cmd = "python3"
exec_timeout_secs = 60
repair_enabled = true
isolated_env = false
deny_network = true
python_path = ["../stubs"]
extra_env = { PYTHONDONTWRITEBYTECODE = "1" }
outputs_dir = "outputs"
"""

VARIANTS = [
    ("Provide a one-word answer", "one-word"),
    ("Provide the numerical answer", "numerical"),
    ("Answer with a single word only", "single-word"),
    ("Reply with the answer and nothing else", "answer-only"),
    ("Be as concise as possible", "concise"),
]

QUESTION_SETS = [
    ["What is 1 + 1?", "What is the capital of Italy?", "Is water wet?", "What is 3 * 3?"],
    ["What is 2+2?", "Who painted the Mona Lisa?", "Is the sun a star?", "What is 10 - 4?"],
    ["What is the capital of France?", "What is 5 + 7?", "Is ice cold?"],
    ["What colour is grass?", "What is 9 / 3?", "Who wrote Hamlet?", "Is fire hot?", "What is 6 + 1?"],
]


def fence(code, lang="python"):
    return f"```{lang}\n{code}```\n"


def candidates(prefix, training_first):
    items = [
        f'Output format instruction: adding "{prefix}" to each question will stop the model from adding sentences around the answer.',
        "Few-shot prompting: a few examples of bare answers before the question will make the model copy that style.",
        "Token budget: a smaller max_tokens value will cut the reply down to the answer.",
        "Answer extraction: a regular expression applied to the reply will keep only the answer.",
        "Fine-tuning: training the model on question and bare-answer pairs will change its default style.",
    ]
    if training_first:
        items.insert(0, items.pop())
    return "\n".join(f"{i}. {t}" for i, t in enumerate(items, 1)) + "\n"


def selection(prefix, infeasible):
    if infeasible:
        return (
            "Hypothesis: Adjusting the Model Itself\n\n"
            "Prompt wording only hides the symptom. The problem can be solved by training the model on a "
            "dataset of questions paired with bare answers, so that short replies become its default.\n"
        )
    return (
        "Hypothesis: Explicit Answer Format\n\n"
        f'Prefixing every question with "{prefix}:" will make the model return only the answer, because '
        "the instruction then states the expected length, which the original prompt leaves open.\n"
    )


def reformulation(prefix):
    return (
        "Let Q be a set of questions, g(q) the prompt with the prefix "
        f'"{prefix}: " added, M(p) the reply and W(r) its word count.\n'
        "H: the share of q in Q with W(M(g(q))) <= W(M(q)) is greater than 0.5.\n"
    )


def plan(prefix):
    return (
        "1. Prepare a handful of short factual questions.\n"
        f'2. For each question build the plain prompt and the prompt prefixed with "{prefix}:".\n'
        "3. Query the model with both prompts using the openai library.\n"
        "4. Count the words of each reply and record whether the prefixed reply is not longer.\n"
        "5. Accept the hypothesis when more than half of the questions satisfy this.\n"
    )


def verify_code(prefix, questions, api_key_line=False):
    qs = ",\n    ".join(json.dumps(q) for q in questions)
    key = "openai.api_key = 'your-api-key'\n\n" if api_key_line else ""
    return f"""import openai

{key}questions = [
    {qs},
]
prefix = "{prefix}: "

shorter = 0
for q in questions:
    plain = openai.Completion.create(engine="text-davinci-002", prompt=q, max_tokens=8)
    constrained = openai.Completion.create(engine="text-davinci-002", prompt=prefix + q, max_tokens=8)
    if len(constrained.choices[0].text.split()) <= len(plain.choices[0].text.split()):
        shorter += 1

rate = shorter / len(questions)
print(f"share of questions with a shorter answer: {{rate:.2f}}")
if rate > 0.5:
    print("The hypothesis is supported.")
else:
    print("The hypothesis is not supported.")
"""


def broken_code(prefix, questions, variant):
    """Clean code that stops with an error at run time."""
    qs = ",\n    ".join(json.dumps(q) for q in questions)
    if variant == 0:
        body = """responses = {}
for q in questions:
    reply = openai.Completion.create(engine="text-davinci-002", prompt=prefix + q, max_tokens=8)
    responses[q] = reply.choices[0].text.strip()

if "lengths" not in responses:
    sys.exit("KeyError: 'lengths' (responses has no entry named lengths)")
"""
    elif variant == 1:
        body = """results = []
for q in questions:
    reply = openai.ChatCompletion.create(model="gpt-4", messages=[{"role": "user", "content": prefix + q}])
    results.append(reply)

if not hasattr(results[0], "text"):
    sys.exit("AttributeError: 'ChatCompletion' response has no attribute 'text'")
"""
    else:
        body = """scores = [len(q.split()) for q in questions if q.startswith(prefix)]
if not scores:
    sys.exit("ZeroDivisionError: division by zero while averaging an empty list of scores")
"""
    return f"""import sys

import openai

questions = [
    {qs},
]
prefix = "{prefix}: "

{body}"""


def still_broken(prefix, questions, variant):
    qs = ",\n    ".join(json.dumps(q) for q in questions)
    return f"""import sys

import openai

questions = [
    {qs},
]
prefix = "{prefix}: "

replies = [openai.Completion.create(engine="text-davinci-002", prompt=prefix + q, max_tokens=8) for q in questions]
summary = {{"count": len(replies)}}
if "shorter_share" not in summary:
    sys.exit("KeyError: 'shorter_share' (variant {variant} of the analysis still reads a missing field)")
"""


def unclean_code(kind, prefix):
    if kind == 0:
        return f"""import sys

general_prompts = [...]  # Replace with your general prompts
if len(general_prompts) < 2:
    sys.exit("error: not enough prompts to compare")
specific_prompts = ["{prefix}: " + p for p in general_prompts]
"""
    if kind == 1:
        return f"""import sys


def ask_llm(question):
    return "Placeholder response"


questions = ["What is 1 + 1?", "Is the sky blue?"]
plain = [ask_llm(q) for q in questions]
constrained = [ask_llm("{prefix}: " + q) for q in questions]
if plain == constrained:
    sys.exit("error: placeholder responses cannot be compared")
"""
    return f"""import sys

math_questions = [
    # Add your list of questions here
    # Each entry pairs the plain question with the "{prefix}" version
]

if not math_questions:
    sys.exit("error: no questions were defined")
"""


def training_code():
    return """import sys

dataset = [...]  # Question and bare-answer pairs go here

def train(model_name, data):
    raise NotImplementedError

if not dataset:
    sys.exit("error: no training data")
train("gpt-2", dataset)
"""


def install_code(packages):
    calls = "\n".join(f"install('{p}')" for p in packages)
    return f"""import subprocess
import sys

def install(package):
    subprocess.check_call([sys.executable, "-m", "pip", "install", package])

{calls}
"""


def trial(i, archetype):
    prefix, _ = VARIANTS[i % len(VARIANTS)]
    questions = QUESTION_SETS[i % len(QUESTION_SETS)]
    infeasible = archetype == "E"
    out = [
        candidates(prefix, infeasible),
        selection(prefix, infeasible),
        reformulation(prefix),
        plan(prefix),
    ]
    packages = ["openai"]
    repair = None
    if archetype == "A":
        final = verify_code(prefix, questions)
    elif archetype == "A_repair":
        final = broken_code(prefix, questions, i % 3)
        repair = verify_code(prefix, questions)
    elif archetype == "B":
        final = verify_code(prefix, questions, api_key_line=True)
    elif archetype == "C":
        final = broken_code(prefix, questions, i % 3)
        repair = still_broken(prefix, questions, i % 3)
    elif archetype == "D_install":
        final = unclean_code(i % 3, prefix)
        packages = ["openai", "llm-answer-metrics"]
    elif archetype == "D_verify":
        final = unclean_code(i % 3, prefix)
        repair = unclean_code((i + 1) % 3, prefix)
    else:
        final = training_code()
        packages = ["transformers", "datasets"]
    first_draft = final.replace("import openai\n", "import openai\n\nopenai.api_key = 'your-api-key'\n", 1)
    out.append("Here is the verification code:\n\n" + fence(first_draft))
    out.append(fence(final))
    out.append("Install these packages first:\n\n" + fence(install_code(packages)))
    if repair is not None:
        out.append("The error is fixed below.\n\n" + fence(repair))
    return out


def batch_archetypes():
    kinds = (
        ["A"] * 10 + ["A_repair"] * 3 + ["B"] * 4 + ["C"] * 11
        + ["D_install"] * 9 + ["D_verify"] * 9 + ["E"] * 4
    )
    assert len(kinds) == 50
    # Fixed interleaving so neighbouring trials differ.
    return [kinds[(i * 37) % 50] for i in range(50)]


def write_dir(name, trials):
    root = os.path.join(HERE, name)
    responses = os.path.join(root, "responses")
    shutil.rmtree(responses, ignore_errors=True)
    os.makedirs(responses)
    with open(os.path.join(root, "autoresearch.toml"), "w") as fh:
        fh.write(CONFIG)
    for key, texts in trials:
        with open(os.path.join(responses, f"{key}.json"), "w") as fh:
            json.dump(texts, fh, indent=1)
            fh.write("\n")


def main():
    write_dir("repair_success", [("transcript", trial(0, "A_repair"))])
    write_dir("repair_fail", [("transcript", trial(1, "C"))])
    write_dir(
        "batch_50",
        [(f"trial_{i + 1:02d}", trial(i, kind)) for i, kind in enumerate(batch_archetypes())],
    )


if __name__ == "__main__":
    main()
