"""Regenerate the bundled fixtures under fixtures/.

Motions come from the procedural generators.  LLM replay fixtures are
authored responses stored against the exact prompts the CLI builds, so
`atomize --mode replay` works offline.

    python3 scripts/make_fixtures.py [--out fixtures]
"""
import argparse
import json
from pathlib import Path

from atomotion import llm, synth
from atomotion.motion import write_motion

PERIODS = 2

# Period 0 of the stomp response is the worked example shipped with the
# prompt; everything else is authored for these fixtures.
STOMP = {
    "0": {
        "spine": "remains relatively stable as the motion initiates",
        "left_upper_limb": "left arm moves down slightly",
        "right_upper_limb": "no significant movement",
        "left_lower_limb": "left hip shifts preparatory to stomp, ankle begins to flex",
        "right_lower_limb": "stationary",
        "trajectory": "preparing for stomping action",
    },
    "1": {
        "spine": "leans forward a little as the foot comes down",
        "left_upper_limb": "left arm swings back for balance",
        "right_upper_limb": "right arm stays relaxed at the side",
        "left_lower_limb": "left knee lifts high then the foot strikes the ground",
        "right_lower_limb": "right leg stays planted and bears the weight",
        "trajectory": "stays in place",
    },
}

WALK = {
    "0": {
        "spine": "stays upright",
        "left_upper_limb": "left arm swings forward",
        "right_upper_limb": "right arm swings backward",
        "left_lower_limb": "left leg steps forward",
        "right_lower_limb": "right leg pushes off the ground",
        "trajectory": "moves forward steadily",
    },
    "1": {
        "spine": "stays upright",
        "left_upper_limb": "left arm swings backward",
        "right_upper_limb": "right arm swings forward",
        "left_lower_limb": "left leg pushes off the ground",
        "right_lower_limb": "right leg steps forward",
        "trajectory": "keeps moving forward",
    },
}

RESPONSES = {
    "he stomps his left feet": STOMP,
    "a person walks forward at a steady pace": WALK,
    "a person raises the right hand and waves": {
        "0": {
            "spine": "stays upright",
            "left_upper_limb": "left arm hangs at the side",
            "right_upper_limb": "right arm rises up beside the head",
            "left_lower_limb": "stationary",
            "right_lower_limb": "stationary",
            "trajectory": "stays in place",
        },
        "1": {
            "spine": "stays upright",
            "left_upper_limb": "left arm hangs at the side",
            "right_upper_limb": "right forearm waves side to side",
            "left_lower_limb": "stationary",
            "right_lower_limb": "stationary",
            "trajectory": "stays in place",
        },
    },
    "a person squats down and stands back up": {
        "0": {
            "spine": "tilts forward as the hips lower",
            "left_upper_limb": "left arm reaches forward",
            "right_upper_limb": "right arm reaches forward",
            "left_lower_limb": "left knee bends deeply",
            "right_lower_limb": "right knee bends deeply",
            "trajectory": "body lowers toward the ground",
        },
        "1": {
            "spine": "straightens back up",
            "left_upper_limb": "left arm returns to the side",
            "right_upper_limb": "right arm returns to the side",
            "left_lower_limb": "left knee extends",
            "right_lower_limb": "right knee extends",
            "trajectory": "body rises to standing",
        },
    },
    "a person turns to the left in place": {
        "0": {
            "spine": "rotates slightly to the left",
            "left_upper_limb": "left arm stays at the side",
            "right_upper_limb": "right arm stays at the side",
            "left_lower_limb": "left foot steps around",
            "right_lower_limb": "right foot pivots",
            "trajectory": "begins turning left",
        },
        "1": {
            "spine": "settles facing the new direction",
            "left_upper_limb": "left arm stays at the side",
            "right_upper_limb": "right arm stays at the side",
            "left_lower_limb": "left foot plants",
            "right_lower_limb": "right foot follows around",
            "trajectory": "finishes a quarter turn to the left",
        },
    },
}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "fixtures"))
    args = ap.parse_args(argv)
    out = Path(args.out)
    (out / "motions").mkdir(parents=True, exist_ok=True)

    items = []
    for ident, text, motion in synth.corpus(per_kind=4, seed=0):
        rel = f"motions/{ident}.motion"
        write_motion(out / rel, motion)
        items.append({"id": ident, "text": text, "motion": rel})
    with open(out / "dataset.json", "w", encoding="utf-8") as fh:
        json.dump({"items": items}, fh, indent=2)
        fh.write("\n")

    examples = [
        {"input": "he stomps his left feet", "output": STOMP},
        {"input": "a person walks forward at a steady pace", "output": WALK},
    ]
    with open(out / "examples.json", "w", encoding="utf-8") as fh:
        json.dump(examples, fh, indent=2)
        fh.write("\n")

    # a raw response as an LLM might return it, wrapped in prose and a fence
    raw = "Here is the decomposition.\n```json\n" + json.dumps(STOMP, indent=4) + "\n```\n"
    (out / "llm").mkdir(exist_ok=True)
    with open(out / "llm" / "stomp_example_response.txt", "w", encoding="utf-8") as fh:
        fh.write(raw)

    store = llm.FixtureStore(out / "llm" / "replay")
    loaded = llm.load_examples(out / "examples.json")
    prompts = []
    for text, response in RESPONSES.items():
        prompt = llm.build_inference_prompt(text, loaded, PERIODS).render()
        store.put(prompt, json.dumps(response, indent=4))
        prompts.append(text)
    with open(out / "prompts.json", "w", encoding="utf-8") as fh:
        json.dump({"periods": PERIODS, "texts": prompts}, fh, indent=2)
        fh.write("\n")


if __name__ == "__main__":
    main()
