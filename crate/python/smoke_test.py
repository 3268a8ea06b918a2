"""Smoke test for the dualground_py extension.

Build and install first:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/dualground_py-*.whl
"""

import dualground_py as dg


def main():
    box = (0.40, 0.30, 0.60, 0.40)
    assert dg.center(box) == (0.5, 0.35)
    assert dg.hit((0.40, 0.30), box)
    assert not dg.hit((0.61, 0.35), box)
    assert dg.normalize_bbox([100, 50, 300, 150], 1000, 500) == (0.1, 0.1, 0.3, 0.3)

    text = dg.render_chain((0.46, 0.78))
    assert text == "<|grounding_start|>(0.46,0.78)<|grounding_end|>", text
    c = dg.parse_chain(text)
    assert c.kind == "fast" and c.point == (0.46, 0.78)

    slow = dg.render_chain((0.5, 0.25), summary="a list view", focus="third row")
    c = dg.parse_chain(slow)
    assert (c.kind, c.summary, c.focus) == ("slow", "a list view", "third row")
    assert dg.classify_first_token(slow) == "slow"
    try:
        dg.parse_chain("(0.5,0.5)")
    except ValueError:
        pass
    else:
        raise AssertionError("unwrapped point must not parse")

    d = dg.select_mode(0.5, 0.5)
    assert d["mode"] == "slow" and abs(d["p_slow_adj"] - 0.3) < 1e-12
    assert dg.select_mode(0.0, 0.0)["fallback_used"]

    corpus = dg.SceneCorpus(n_scenes=200, seed=7)
    assert len(corpus) == 200
    report = corpus.evaluate_mock(alpha=dg.DEFAULT_ALPHA, seed=1)
    modes = report["mode_counts"]
    assert modes["fast"] + modes["slow"] == 200
    rows = corpus.sweep_mock([0.0, 0.6, 1.0], seed=1)
    assert [r["alpha"] for r in rows] == [0.0, 0.6, 1.0]
    assert rows[0]["latency_ms"] < rows[2]["latency_ms"]
    stats = corpus.synthesize_mock(seed=1)
    assert stats["samples"] == 200

    print("overall accuracy at alpha 0.6: %.3f" % report["overall"])
    print("python smoke test passed")


if __name__ == "__main__":
    main()
