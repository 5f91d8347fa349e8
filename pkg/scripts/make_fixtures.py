"""Regenerate the offline fixture data in data/fixture/.

questions.jsonl      query records for the offline pipeline
mock_answers.json    answer table for the mock LLM client, keyed by answer prompt
filter_dataset.jsonl records with five perturbations each, for the query filter
correctness.json     per-record original/perturbation correctness for the filter

The mock answers follow a hidden rule so that the best arm depends on the
query's rule-based features: each arm scores a query with a fixed random
linear function of its features, the top arm gets the exact reference, the
runner-up gets a hedged answer and the rest fall through to the fallback.
"""
import json
from pathlib import Path

import numpy as np

from querybandits.core import FIVE_PLUS_NO_REWRITE, QueryRecord, arm_set, write_jsonl
from querybandits.env import trivial_perturbations
from querybandits.extraction import RuleBasedExtractor
from querybandits.pipeline import MockRewriter, answer_prompt

OUT = Path(__file__).resolve().parents[1] / "data" / "fixture"
DATASET = "fixture-qa"

QA = [
    ("What is the capital of France?", "Paris"),
    ("Who wrote the novel Dracula?", "Bram Stoker"),
    ("Which is the largest planet in the solar system?", "Jupiter"),
    ("Can you tell me the chemical symbol for gold?", "Au"),
    ("How many continents are there on Earth?", "seven"),
    ("What was the name of the first artificial satellite launched in 1957?", "Sputnik 1"),
    ("Who painted the ceiling of the Sistine Chapel?", "Michelangelo"),
    ("What is the boiling point of water at sea level in Celsius?", "100 degrees"),
    ("Which ocean is the deepest?", "the Pacific Ocean"),
    ("Is it not true that the Amazon is the longest river in South America?", "yes"),
    ("What does a bank charge when you borrow money?", "interest"),
    ("Who is the scientist that proposed the theory of general relativity?", "Albert Einstein"),
    ("Could you explain what photosynthesis produces?", "glucose and oxygen"),
    ("What is the smallest prime number?", "two"),
    ("In which country is the city of Kyoto?", "Japan"),
    ("What is the hardest natural substance?", "diamond"),
    ("Who discovered penicillin in 1928?", "Alexander Fleming"),
    ("What gas do plants absorb from the air?", "carbon dioxide"),
    ("Which instrument has eighty eight keys?", "the piano"),
    ("What is the tallest mountain in the world?", "Mount Everest"),
    ("Please name the author of Pride and Prejudice.", "Jane Austen"),
    ("What is the currency of Japan?", "the yen"),
    ("How many legs does a spider have?", "eight"),
    ("What organ pumps blood through the body?", "the heart"),
    ("Who was the first person to walk on the Moon?", "Neil Armstrong"),
    ("What is the freezing point of water in Fahrenheit?", "32 degrees"),
    ("Which element has the atomic number one?", "hydrogen"),
    ("What is the main language spoken in Brazil?", "Portuguese"),
    ("Who composed the Fifth Symphony that starts with four famous notes?", "Ludwig van Beethoven"),
    ("What is the largest desert in Africa?", "the Sahara"),
    ("Can you say which planet is known as the red planet?", "Mars"),
    ("What is the square root of eighty one?", "nine"),
    ("Which country gifted the Statue of Liberty to the United States?", "France"),
    ("What do bees make from nectar?", "honey"),
    ("Who invented the telephone?", "Alexander Graham Bell"),
    ("What is the longest bone in the human body?", "the femur"),
    ("Which city hosted the Olympic Games in 2008?", "Beijing"),
    ("What is the fastest land animal?", "the cheetah"),
    ("What is the legal voting age in most countries?", "eighteen"),
    ("Which vitamin does sunlight help the body produce?", "vitamin D"),
    ("What is the capital city of Australia?", "Canberra"),
    ("Who developed the polio vaccine in the 1950s?", "Jonas Salk"),
    ("What is the plural of mouse?", "mice"),
    ("How many sides does a hexagon have?", "six"),
    ("What does the heart pump when it beats, if not blood?", "blood"),
    ("Which metal is liquid at room temperature?", "mercury"),
    ("What is the biggest mammal that lives in the ocean?", "the blue whale"),
    ("Who wrote the play Romeo and Juliet?", "William Shakespeare"),
    ("What is the name of the galaxy that contains our solar system?", "the Milky Way"),
    ("Which bird is a symbol of peace?", "the dove"),
    ("What is the main ingredient in guacamole?", "avocado"),
    ("Could you tell me what the Great Wall was built to protect against?", "invasions"),
    ("What is the coldest continent?", "Antarctica"),
    ("Who was president of the United States during the Civil War?", "Abraham Lincoln"),
    ("Which planet has the most visible rings?", "Saturn"),
    ("What is the opposite of the word ancient?", "modern"),
]

MULTIPLE_CHOICE = [
    ("Which of these is a mammal?", ("shark", "dolphin", "trout", "octopus"), "B"),
    ("What colour do you get by mixing blue and yellow?", ("green", "purple", "orange", "brown"), "A"),
    ("Which is the largest ocean?", ("Atlantic", "Indian", "Arctic", "Pacific"), "D"),
    ("Which instrument has strings?", ("drum", "flute", "violin", "trumpet"), "C"),
    ("What is the closest star to Earth?", ("Sirius", "the Sun", "Vega", "Polaris"), "B"),
    ("Which number is even?", ("three", "seven", "twelve", "nine"), "C"),
]


def build_records():
    recs = []
    for i, (q, a) in enumerate(QA):
        recs.append(QueryRecord(f"q{i:03d}", DATASET, q, a, trivial_perturbations(q)))
    for j, (q, choices, a) in enumerate(MULTIPLE_CHOICE):
        recs.append(QueryRecord(f"mc{j:02d}", DATASET, q, a, trivial_perturbations(q), "MultipleChoice", choices))
    return recs


def mock_answers(recs, seed=7):
    rng = np.random.default_rng(seed)
    arms = arm_set(FIVE_PLUS_NO_REWRITE)
    rewriter = MockRewriter()
    extractor = RuleBasedExtractor()
    w = rng.normal(size=(5, 18))
    table = {}
    for rec in recs:
        x = extractor.extract(rec.question).as_array()
        order = np.argsort(-(w @ x), kind="stable")
        for arm in arms:
            prompt = answer_prompt(rewriter.rewrite(rec.question, arm), rec)
            if arm.is_identity:
                if rng.random() < 0.3:
                    table[prompt] = rec.reference_answer
                continue
            rank = int(np.where(order == arm.index)[0][0])
            if rank == 0:
                table[prompt] = rec.reference_answer
            elif rank == 1:
                table[prompt] = f"It is probably {rec.reference_answer}, though I am not certain."
    return table


# Number of incorrect perturbations per filter record, and whether the original
# is answered correctly. Kept records are exactly those with a correct original
# and 1 to 3 incorrect perturbations.
FILTER_DESIGN = [
    (True, 0), (True, 1), (True, 2), (True, 3), (True, 4), (True, 5),
    (False, 0), (False, 1), (False, 2), (False, 3),
    (True, 1), (True, 3), (True, 4), (False, 5),
]


def filter_fixture(recs):
    rng = np.random.default_rng(11)
    out, table, expected = [], {}, []
    for k, (orig_ok, n_wrong) in enumerate(FILTER_DESIGN):
        base = recs[k]
        rec = QueryRecord(f"f{k:02d}", "fixture-filter", base.question, base.reference_answer,
                          trivial_perturbations(base.question))
        wrong = set(rng.choice(5, size=n_wrong, replace=False).tolist())
        table[rec.id] = {"original": orig_ok, "perturbations": [i not in wrong for i in range(5)]}
        if orig_ok and 1 <= n_wrong <= 3:
            expected.append(rec.id)
        out.append(rec)
    return out, table, expected


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    recs = build_records()
    write_jsonl(OUT / "questions.jsonl", recs)
    answers = mock_answers(recs)
    (OUT / "mock_answers.json").write_text(json.dumps(answers, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    frecs, table, expected = filter_fixture(recs)
    write_jsonl(OUT / "filter_dataset.jsonl", frecs)
    (OUT / "correctness.json").write_text(
        json.dumps({"table": table, "expected_kept": expected}, indent=1) + "\n", encoding="utf-8"
    )
    print(f"wrote {len(recs)} questions, {len(answers)} mock answers, {len(frecs)} filter records to {OUT}")


if __name__ == "__main__":
    main()
