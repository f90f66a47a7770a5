"""Regenerates the bundled raw recordings in fixtures/raw.

Three users, four activities, two recordings each at 30 Hz. Every
activity is a periodic motion whose phase cycles through a few distinct
shapes; users differ in amplitude, cadence and sensor offset.

    python3 fixtures/make_fixtures.py
"""

import pathlib

import numpy as np

RATE = 30.0
HEADER = "timestamp,acc_x,acc_y,acc_z,gyro_x,gyro_y,gyro_z,label"

# (base frequency Hz, acc amplitude, gyro amplitude, harmonic weight)
ACTIVITIES = {
    0: (0.0, 0.05, 0.02, 0.0),  # still
    1: (1.8, 2.0, 0.8, 0.3),  # walk
    2: (2.8, 4.5, 1.6, 0.6),  # run
    3: (1.2, 1.2, 2.2, 0.1),  # turn
}

USERS = {
    "u1": dict(gain=1.0, cadence=1.0, offset=(0.0, 0.0, 9.81), seed=11),
    "u2": dict(gain=1.35, cadence=0.85, offset=(0.6, -0.3, 9.6), seed=12),
    "u3": dict(gain=0.75, cadence=1.15, offset=(-0.4, 0.5, 10.0), seed=13),
}

BOUT_SECONDS = 20
BOUTS_PER_RECORDING = 2


def bout(rng, label, user, seconds):
    freq, acc_amp, gyro_amp, harm = ACTIVITIES[label]
    n = int(seconds * RATE)
    t = np.arange(n) / RATE
    freq *= user["cadence"]
    # Slow drift between motion shapes gives each bout a temporal structure.
    envelope = 1.0 + 0.5 * np.sin(2 * np.pi * t / 12.0)
    phase = 2 * np.pi * freq * t
    wave = np.sin(phase) + harm * np.sin(2 * phase + 0.7)
    acc = np.stack(
        [
            acc_amp * envelope * wave,
            0.6 * acc_amp * envelope * np.cos(phase),
            0.4 * acc_amp * wave,
        ],
        axis=1,
    )
    acc = user["gain"] * acc + np.array(user["offset"])
    gyro = gyro_amp * user["gain"] * np.stack(
        [np.cos(phase), envelope * np.sin(phase + 0.3), wave], axis=1
    )
    acc += rng.normal(0.0, 0.08, acc.shape)
    gyro += rng.normal(0.0, 0.04, gyro.shape)
    return acc, gyro, np.full(n, label)


def main():
    out = pathlib.Path(__file__).resolve().parent / "raw"
    out.mkdir(exist_ok=True)
    for name, user in USERS.items():
        rng = np.random.default_rng(user["seed"])
        for rec in range(2):
            order = list(ACTIVITIES)
            rng.shuffle(order)
            parts = [bout(rng, lab, user, BOUT_SECONDS) for _ in range(BOUTS_PER_RECORDING) for lab in order]
            acc = np.concatenate([p[0] for p in parts])
            gyro = np.concatenate([p[1] for p in parts])
            labels = np.concatenate([p[2] for p in parts])
            ts = np.arange(len(labels)) / RATE
            path = out / f"{name}__rec{rec + 1}.csv"
            with path.open("w") as fh:
                fh.write(HEADER + "\n")
                for i in range(len(labels)):
                    row = [ts[i], *acc[i], *gyro[i]]
                    fh.write(",".join(f"{v:.4f}" for v in row) + f",{labels[i]}\n")


if __name__ == "__main__":
    main()
