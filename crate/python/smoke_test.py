"""Smoke test for the gbhs_py extension module.

Build and install first, e.g. `maturin develop --release -m crates/python/Cargo.toml`.
"""

import os
import tempfile

import gbhs_py


def main():
    reg = gbhs_py.Registry("microworld10")
    assert len(reg) == 10
    assert "count" in reg.module_names()

    p = gbhs_py.Program(reg, "count(filter_red(scene))")
    assert p.to_sequence() == ["count", "filter_red", "scene"]
    assert p == gbhs_py.Program(reg, "count filter_red scene")
    assert p.legality(0) == (0, True, True)
    assert gbhs_py.Program(reg, "count count scene").legality(1) == (1, False, True)

    leaf = gbhs_py.Program(reg, "count scene")
    mutants = {m.key() for m in leaf.mutate(1)}
    assert "count filter_red scene" in mutants and "count END" in mutants

    try:
        gbhs_py.Program(reg, "count")
    except ValueError:
        pass
    else:
        raise AssertionError("truncated program accepted")

    data = gbhs_py.Dataset.generate(reg, 20, seed=3, leaf_bias=0.75)
    assert len(data) == 20
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "ds.jsonl")
        data.save(path)
        again = gbhs_py.Dataset.load(reg, path)
        assert again.question(0) == data.question(0)

    best, score, evaluations, steps = data.search(0, mode="exact-match")
    assert score == 1.0 and best == data.program(0), (best, score)
    assert evaluations >= 1 and steps >= 1

    solved, spent, curve = data.train(mode="accuracy", csm=False, max_loop=60, seed=1)
    assert solved >= 18, solved
    assert curve == sorted(curve)

    reinforce = data.baseline(2000, seed=1)
    k_common, rows, ratio = gbhs_py.summarize_curves([("gbhs", [curve]), ("reinforce", [reinforce])], len(data))
    print("solved", solved, "of", len(data), "with", spent, "evaluations; common reach", k_common)
    for method, median, stability in rows:
        print(f"  {method}: median evaluations {median}, max/min at half {stability}")
    print("ratio", ratio)
    print("ok")


if __name__ == "__main__":
    main()
