#!/usr/bin/env python3
"""Build the signpy extension if needed and run a quick end-to-end check."""

import math
import os
import shutil
import subprocess
import sys
import tempfile

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
BUILD_DIR = os.path.join(ROOT, "python", "_build")


def ensure_extension():
    so_path = os.path.join(BUILD_DIR, "signpy.so")
    lib_path = os.path.join(ROOT, "target", "debug", "libsignpy.so")
    if not os.path.exists(so_path) or (
        os.path.exists(lib_path)
        and os.path.getmtime(lib_path) > os.path.getmtime(so_path)
    ):
        subprocess.run(
            ["cargo", "build", "-p", "sign-py"], cwd=ROOT, check=True
        )
        os.makedirs(BUILD_DIR, exist_ok=True)
        shutil.copy2(lib_path, so_path)
    sys.path.insert(0, BUILD_DIR)


def check(name, cond):
    if not cond:
        print(f"FAIL {name}")
        sys.exit(1)
    print(f"PASS {name}")


def main():
    ensure_extension()
    import signpy

    check(
        "eppf of {1,2} at alpha=1 discount=0.5 is 0.75",
        abs(math.exp(signpy.log_eppf([2, 1], 1.0, 0.5)) - 0.75) < 1e-12,
    )
    check("5 partitions of 3 items", len(signpy.enumerate_partitions(3)) == 5)

    weights = [
        math.exp(v)
        for v in signpy.block_membership_log_weights(1, [3, 2], 1.0, 0.0)
    ]
    check(
        "urn weights at discount 0 are cluster sizes then alpha",
        all(abs(a - b) < 1e-12 for a, b in zip(weights, [3.0, 2.0, 1.0])),
    )

    data = signpy.simulate("sim1", 100, seed=1)
    check("simulated size", len(data) == 100 and len(data.w[0]) == 5)
    check("sim1 carries true labels", sorted(set(data.labels)) == [0, 1, 2, 3, 4])

    model = signpy.fit(
        data, n_iter=300, burn_frac=0.5, thin=5, max_items_per_shard=50, seed=3
    )
    labels = model.labels()
    check("fit labels cover the data", len(labels) == 100)
    check("cluster count reported", model.n_clusters >= 1)

    probs = model.predict(data.w, data.u, seed=0)
    check(
        "probabilities strictly inside (0, 1)",
        len(probs) == 100 and all(0.0 < p < 1.0 for p in probs),
    )
    check("auc in range", 0.0 <= signpy.auc(probs, data.z) <= 1.0)

    model2 = signpy.fit(
        data, n_iter=300, burn_frac=0.5, thin=5, max_items_per_shard=50, seed=3
    )
    check("refit with the same seed is identical", model2.labels() == labels)

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "model.json")
        model.save(path)
        loaded = signpy.Model.load(path)
        probs2 = loaded.predict(data.w, data.u, seed=0)
        check("saved and loaded model predicts identically", probs2 == probs)

    own = signpy.Dataset(
        z=[0, 1, 0, 1],
        w=[[0.0], [2.0], [0.1], [1.9]],
        u=[[0], [1], [0], [1]],
        levels=[2],
    )
    tiny = signpy.fit(own, n_iter=100, burn_frac=0.5, thin=1, seed=5)
    check("hand-built dataset fits", len(tiny.labels()) == 4)

    print("all smoke tests passed")


if __name__ == "__main__":
    main()
