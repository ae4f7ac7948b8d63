#!/usr/bin/env python3
"""Regenerate tests/fixtures/demo_trace.csv.

Three base stations with smooth, closely related reward surfaces over
(state, threshold), sampled at random configurations.  The stations share
the same functional form and differ only in their optimal-threshold offset
and state scales, so similarity-aware policies have real structure to
exploit while a k-NN simulator over the rows stays faithful to the surface.
"""

from pathlib import Path

import numpy as np

OUT = Path(__file__).resolve().parent.parent / "tests" / "fixtures" / "demo_trace.csv"

ROWS_PER_BS = 120
BS = [
    ("101", -99.0, 8.0),
    ("202", -97.0, 20.0),
    ("303", -95.0, 45.0),
]


def reward_percent(rng, state, threshold, opt_center):
    # optimum drifts with load; response falls off smoothly around it
    opt = opt_center + 4.0 * np.tanh(state[0] - 1.0)
    base = 0.50 + 0.38 * np.exp(-((threshold - opt) / 6.0) ** 2)
    load_penalty = 0.06 * np.tanh(state[4] / 60.0)
    noise = 0.01 * rng.standard_normal()
    return float(np.clip(base - load_penalty + noise, 0.0, 1.0) * 100.0)


def main() -> None:
    rng = np.random.default_rng(20260809)
    lines = [
        "bs_id,active_users,cqi,small_packet_sdus,small_packet_volume,user_count,threshold,users_thp_ge_5mbps"
    ]
    for bs_id, opt_center, user_scale in BS:
        for _ in range(ROWS_PER_BS):
            state = np.array(
                [
                    rng.gamma(2.0, 0.5),  # active users
                    rng.uniform(0.2, 0.7),  # cqi fraction
                    rng.uniform(25.0, 65.0),  # % small packet sdus
                    rng.uniform(20.0, 50.0),  # % small packet volume
                    rng.gamma(3.0, user_scale / 3.0),  # user count
                ]
            )
            threshold = int(rng.integers(-112, -83))
            pct = reward_percent(rng, state, threshold, opt_center)
            lines.append(
                f"{bs_id},{state[0]:.9f},{state[1]:.6f},{state[2]:.8f},"
                f"{state[3]:.8f},{state[4]:.5f},{threshold},{pct:.8f}"
            )
    OUT.write_text("\n".join(lines) + "\n")
    print(f"wrote {len(lines) - 1} rows to {OUT}")


if __name__ == "__main__":
    main()
