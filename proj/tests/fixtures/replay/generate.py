#!/usr/bin/env python3
"""Writes the replay fixture: 72 single-session subjects, a fixed 24/48
train/test split and 50 seeds of synthetic per-token scores under paired AD
and C models. Rerunning reproduces the committed files byte for byte."""

import json
import os
import random

HERE = os.path.dirname(os.path.abspath(__file__))
SEEDS = range(50)
WORDS = "the boy is on the stool and the cookie jar mother dries dishes water overflows sink".split()


def subjects(rng):
    out = []
    for label, n in (("AD", 36), ("HC", 36)):
        for i in range(n):
            sid = f"{label.lower()}{i:03d}"
            # latent AD-likeness, overlapping between groups
            lean = rng.gauss(0.6 if label == "AD" else -0.6, 0.7)
            if label == "AD":
                mmse = max(5, min(26, round(20 - 6 * lean + rng.gauss(0, 2))))
            else:
                mmse = max(24, min(30, round(28 - 1.5 * lean + rng.gauss(0, 1))))
            out.append({
                "subject_id": sid,
                "session_id": "1",
                "label": label,
                "age": rng.randint(55, 85),
                "gender": rng.choice("FM"),
                "education": rng.randint(8, 18),
                "mmse": None if i % 11 == 5 else mmse,
                "text": " ".join(rng.choice(WORDS) for _ in range(rng.randint(12, 30))) + " .",
                "lean": lean,
                "n_tokens": rng.randint(12, 30),
            })
    return out


def main():
    rng = random.Random(20240611)
    subs = subjects(rng)
    with open(os.path.join(HERE, "transcripts.jsonl"), "w") as f:
        for s in subs:
            rec = {k: s[k] for k in ("subject_id", "session_id", "label", "age", "gender", "education", "mmse", "text")}
            f.write(json.dumps(rec, separators=(",", ":")) + "\n")

    train = [s for s in subs if int(s["subject_id"][2:]) < 12]
    test = [s for s in subs if int(s["subject_id"][2:]) >= 12]
    with open(os.path.join(HERE, "split.tsv"), "w") as f:
        f.write("side\tsubject_id\tsession_id\n")
        for side, group in (("train", train), ("test", test)):
            for s in group:
                f.write(f"{side}\t{s['subject_id']}\t{s['session_id']}\n")

    os.makedirs(os.path.join(HERE, "scores"), exist_ok=True)
    for seed in SEEDS:
        srng = random.Random(1000 + seed)
        shift = srng.gauss(0, 0.05)
        lines = []
        for s in subs:
            for model, sign in (("AD", -1.0), ("C", 1.0)):
                base = 2.8 + shift + sign * 0.25 * (s["lean"] + srng.gauss(0, 0.5))
                lps = [round(-max(0.05, srng.gauss(base, 0.8)), 4) for _ in range(s["n_tokens"])]
                rec = {"subject_id": s["subject_id"], "session_id": s["session_id"], "model_id": model,
                       "seed": seed, "n_tokens": len(lps), "logprobs": lps}
                lines.append(json.dumps(rec, separators=(",", ":")))
        with open(os.path.join(HERE, "scores", f"seed_{seed:02d}.jsonl"), "w") as f:
            f.write("\n".join(lines) + "\n")


if __name__ == "__main__":
    main()
