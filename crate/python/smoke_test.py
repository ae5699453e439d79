"""Smoke test for the `bpire` extension module.

Build and install first:  pip install --no-build-isolation -e crates/py
"""

import math

import bpire


def main():
    law = bpire.IncrementLaw.gaussian(-1.5, 1.0)
    assert law.regime == "strong", law
    assert law.delta == 1.0
    assert abs(law.gamma - math.exp(-1.0)) < 1e-12

    assert bpire.IncrementLaw.gaussian(-0.5, 1.0).regime == "weak"
    assert bpire.IncrementLaw.gaussian(-1.0, 1.0).regime == "intermediate"

    # e^X = 2 in both generations
    h = bpire.clan_survival_prob([math.log(2.0)] * 2, 1, 2)
    assert abs(h - 2.0 / 7.0) < 1e-15, h
    assert len(bpire.clan_survival_all([0.3, -0.2, 0.1])) == 3

    est = bpire.is_estimate(law, 3, 13, 100_000, seed=7)
    again = bpire.is_estimate(law, 3, 13, 100_000, seed=7, workers=4)
    assert est.mean == again.mean and est.stderr == again.stderr
    direct = bpire.direct_estimate(law, 3, 13, 100_000, seed=8)
    assert est.ci_overlaps(direct), (est, direct)

    try:
        bpire.IncrementLaw.gaussian(0.0, -1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("negative variance accepted")

    csv, ok, flags = bpire.run_spec(
        '\n'.join([
            'target = "T1_ratio"',
            'n_values = [20, 40]',
            'n_samples = 2e4',
            'i = 2',
            '[law]',
            'family = "gaussian"',
            'mu = -1.5',
            'sigma2 = 1.0',
        ])
    )
    assert csv.startswith("n,estimate,stderr,normalized,ratio_to_prev"), csv
    print(f"is_estimate: {est!r}")
    print(f"run_spec pass={ok} flags={flags}")
    print("smoke test ok")


if __name__ == "__main__":
    main()
