"""Regenerates the small archive fixtures used by test_loaders.cpp.

Signals follow closed forms so the C++ tests can recompute every value:
  BVP[i]    = sin(2*pi*1.5*i/64)                 (64 Hz)
  ACC[i, c] = (c + 1) * 0.5 + 0.001 * i          (32 Hz)
  label[w]  = 70 + w                             (one per 2 s step)
"""
import os
import pickle

import numpy as np

SECONDS = 40
here = os.path.dirname(os.path.abspath(__file__))


def signals(acc_dtype=np.float64, fortran=False):
    i = np.arange(SECONDS * 64)
    bvp = np.sin(2 * np.pi * 1.5 * i / 64.0).reshape(-1, 1)
    j = np.arange(SECONDS * 32)
    acc = np.stack([(c + 1) * 0.5 + 0.001 * j for c in range(3)], axis=1).astype(acc_dtype)
    if fortran:
        acc = np.asfortranarray(acc)
    return bvp, acc


def dalia():
    bvp, acc = signals(fortran=True)
    n_labels = (SECONDS * 32 - 256) // 64 + 1
    obj = {
        "signal": {"wrist": {"BVP": bvp, "ACC": acc, "EDA": np.zeros((SECONDS * 4, 1))},
                   "chest": {"ACC": np.zeros((10, 3))}},
        "label": 70.0 + np.arange(n_labels, dtype=np.float64),
        "activity": np.zeros((SECONDS * 4, 1)),
        "subject": "S1",
    }
    os.makedirs(os.path.join(here, "dalia", "S1"), exist_ok=True)
    with open(os.path.join(here, "dalia", "S1", "S1.pkl"), "wb") as f:
        pickle.dump(obj, f, protocol=2)
    del obj["label"]
    with open(os.path.join(here, "dalia_no_label.pkl"), "wb") as f:
        pickle.dump(obj, f, protocol=2)


def wesad():
    bvp, acc = signals(acc_dtype=np.float32)
    obj = {
        "signal": {"wrist": {"BVP": bvp, "ACC": acc}},
        # affect-state codes at 700 Hz: must not be read as heart rate
        "label": np.ones(SECONDS * 700, dtype=np.int32),
        "subject": "S2",
    }
    os.makedirs(os.path.join(here, "wesad", "S2"), exist_ok=True)
    with open(os.path.join(here, "wesad", "S2", "S2.pkl"), "wb") as f:
        pickle.dump(obj, f, protocol=4)
    missing = {"signal": {"wrist": {"BVP": bvp}}, "subject": "S3"}
    with open(os.path.join(here, "wesad_missing_acc.pkl"), "wb") as f:
        pickle.dump(missing, f, protocol=4)


def e4():
    bvp, acc = signals()
    d = os.path.join(here, "unlabeled", "U1")
    os.makedirs(d, exist_ok=True)
    with open(os.path.join(d, "BVP.csv"), "w") as f:
        f.write("1500000000.000000\n64.000000\n")
        f.writelines("%.6f\n" % v for v in bvp[:, 0])
    with open(os.path.join(d, "ACC.csv"), "w") as f:
        f.write("1500000000.000000, 1500000000.000000, 1500000000.000000\n")
        f.write("32.000000, 32.000000, 32.000000\n")
        f.writelines("%.6f, %.6f, %.6f\n" % tuple(r) for r in acc)


if __name__ == "__main__":
    dalia()
    wesad()
    e4()
