"""Smoke test for the pyffspin extension module.

Build and install first, e.g. `pip install --no-build-isolation ./crates/python`
or `maturin develop -m crates/python/Cargo.toml`.
"""

import json
import math

import pyffspin


def main():
    chain = pyffspin.Hamiltonian.named("heisenberg_ferro", "chain", [3])
    report = pyffspin.check(chain)
    assert report["frustration_free"] and report["ground_dimension"] == 4, report

    gs = pyffspin.GroundSpace(chain)
    assert gs.dimension == 4
    zz = gs.expectation([(1.0, "Z1 Z2")])
    assert math.isclose(zz, 1.0 / 3.0, abs_tol=1e-10), zz
    assert abs(gs.expectation([(1.0, "Z1")])) < 1e-10

    energy, degeneracy, _ = pyffspin.exact(chain)
    assert math.isclose(energy, -2.0, abs_tol=1e-10) and degeneracy == 4

    # explicit form round trip
    doc = chain.to_json()
    again = pyffspin.Hamiltonian.from_json(doc)
    assert json.loads(again.to_json()) == json.loads(doc)

    # 1 - |00><00| on the pair plus |0><0| on site 0 has no zero-energy state
    h = pyffspin.Hamiltonian(2, [(0, 1)])
    h.add_two_spin(0, 1, [[1.0 if i == j and i > 0 else 0.0 for j in range(4)] for i in range(4)])
    h.add_single_spin(0, [[1.0, 0.0], [0.0, 0.0]])
    assert not pyffspin.check(h)["frustration_free"]
    try:
        pyffspin.GroundSpace(h)
    except RuntimeError:
        pass
    else:
        raise AssertionError("frustrated input accepted")

    tfi = pyffspin.Hamiltonian.named("tfi", "chain", [6], 0.5)
    e0 = pyffspin.exact(tfi)[0]
    lower = pyffspin.estimate(tfi, "anderson")["energy"]
    upper = pyffspin.estimate(tfi, "symmetric")["energy"]
    product = pyffspin.estimate(tfi, "product", seed=3)["energy"]
    assert lower <= e0 + 1e-9 <= upper + 2e-9 and e0 <= product + 1e-9

    csv = pyffspin.sweep("xxz", "chain", [4], [0.0, 0.25], ["symmetric", "ed"], seed=1)
    lines = csv.strip().split("\n")
    assert lines[0].startswith("lambda,method,energy") and len(lines) == 5, csv

    print("pyffspin smoke test passed")


if __name__ == "__main__":
    main()
