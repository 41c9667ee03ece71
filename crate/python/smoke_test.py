"""Smoke test for the compiled bindings: `pip install --no-build-isolation crates/python`
(or `maturin develop` inside crates/python), then run this file."""

import json
import pathlib
import tempfile

import gridshaper_py as gs

DATA = pathlib.Path(__file__).resolve().parents[1] / "crates" / "core" / "data"


def main():
    assert gs.validate_network(str(DATA / "feeder12.json")) == []
    problems = gs.validate_network(str(DATA / "bad_cycle.json"))
    assert any("cycle" in p.lower() for p in problems), problems

    cases = gs.oracle_agreement(count=5, max_buses=8)
    assert max(c["max_nu_error"] for c in cases) <= 1e-6

    with tempfile.TemporaryDirectory() as out:
        m = gs.run_scenario(str(DATA / "benchmark.json"), out=out)
        assert m["accepted"] == m["requests"] == 31
        assert 0.95 <= m["v_min"] and m["v_max"] <= 1.0 + 1e-6
        written = json.loads((pathlib.Path(out) / "metrics.json").read_text())
        assert abs(written["peak_ratio"] - m["peak_ratio"]) <= 1e-9

    base = gs.baseline(str(DATA / "benchmark.json"))
    assert m["peak_controlled"] < base["peak_uncontrolled"]

    sc = json.loads(gs.gen_scenario(3, [3, 5, 6], steps=20))
    assert sc["steps"] == 20 and sc["seed"] == 3

    print(f"ok: peak {m['peak_controlled']:.4f} vs {base['peak_uncontrolled']:.4f}, "
          f"v in [{m['v_min']:.4f}, {m['v_max']:.4f}]")


if __name__ == "__main__":
    main()
