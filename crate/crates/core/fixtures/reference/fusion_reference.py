"""Float64 reference for the fusion operators and FITB scoring.

Writes fusion_case_01.json and fitb_case_01.json next to the fixtures dir.
Inputs are rounded to float32 first so the Rust side reads exactly the values
used here.

    python3 fusion_reference.py ../
"""
import json
import math
import sys
from pathlib import Path

import numpy as np

ATTRIBUTES = ["color", "style", "occasion", "season", "material", "balance"]


def normalize(v):
    return v / np.linalg.norm(v)


def softmax(x):
    z = np.exp(x - x.max())
    return z / z.sum()


def saliency(target, outfit, tau):
    w = softmax(outfit @ target / tau)
    return w, normalize(w @ outfit)


def aesthetic(attrs, target, visual, sign):
    scores = (attrs @ target + attrs @ visual) / 2.0
    raw = np.exp(sign * scores)
    w = raw / raw.sum()
    return scores, w, normalize(w @ attrs)


def entropy(sims, temperature=1.0):
    p = softmax(sims / temperature)
    h = -sum(x * math.log(x) for x in p if x > 0)
    return min(max(h, 0.0), math.log(len(p)))


def gate(cues, candidates):
    h = [entropy(candidates @ c) for c in cues]
    g = np.exp(-np.array(h))
    g = g / g.sum()
    q = normalize(sum(gi * c for gi, c in zip(g, cues)))
    return h, g, q


def f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def fusion_case(rng, dim=8, n=3, m=6, c=4, tau=0.1):
    outfit_raw = f32(rng.normal(size=(n, dim)))
    target_raw = f32(rng.normal(size=dim))
    attrs_raw = f32(rng.normal(size=(m, dim)))
    cands_raw = f32(rng.normal(size=(c, dim)))

    outfit = np.array([normalize(v) for v in outfit_raw])
    target = normalize(target_raw)
    attrs = np.array([normalize(v) for v in attrs_raw])
    cands = np.array([normalize(v) for v in cands_raw])

    w, visual = saliency(target, outfit, tau)
    scores, aw, aes = aesthetic(attrs, target, visual, 1.0)
    h, g, q = gate([visual, target, aes], cands)
    names = ["visual", "text", "aesthetic"]
    return {
        "dim": dim,
        "tau": tau,
        "outfit": outfit_raw.tolist(),
        "target": target_raw.tolist(),
        "attributes": dict(zip(ATTRIBUTES, attrs_raw.tolist())),
        "candidates": cands_raw.tolist(),
        "expected": {
            "saliency_weights": w.tolist(),
            "visual": visual.tolist(),
            "attribute_scores": dict(zip(ATTRIBUTES, scores.tolist())),
            "attribute_weights": dict(zip(ATTRIBUTES, aw.tolist())),
            "aesthetic": aes.tolist(),
            "cue_entropies": dict(zip(names, h)),
            "gates": dict(zip(names, g.tolist())),
            "q": q.tolist(),
        },
    }


def fitb_case(rng, dim=8):
    q = f32(normalize(rng.normal(size=dim)))
    ids = ["cand-d", "cand-b", "cand-c", "cand-a"]
    vecs = f32(rng.normal(size=(4, dim)))
    vecs = np.array([f32(normalize(v)) for v in vecs])
    # cand-b and cand-a share the best vector; the tie goes to cand-a.
    best = f32(normalize(q + 0.05 * rng.normal(size=dim)))
    vecs[1] = best
    vecs[3] = best
    scores = [float(np.dot(q, v)) for v in vecs]
    order = sorted(range(4), key=lambda i: (-scores[i], ids[i]))
    return {
        "query": q.tolist(),
        "candidates": [{"item_id": i, "vector": v.tolist()} for i, v in zip(ids, vecs)],
        "expected": {"scores": scores, "best": order[0], "best_id": ids[order[0]]},
    }


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "..")
    rng = np.random.default_rng(20240501)
    (out / "fusion_case_01.json").write_text(json.dumps(fusion_case(rng), indent=1) + "\n")
    (out / "fitb_case_01.json").write_text(json.dumps(fitb_case(rng), indent=1) + "\n")


if __name__ == "__main__":
    main()
