"""Scratch experiment: calibrate the joint-vs-isolated ablation signal."""
import sys
import time

import numpy as np

from tcmtl import data, metrics, trainer
from tcmtl.network import LayerSpec, NetConfig


def planted_spec(n, seed, flip=0.0):
    L = 5
    base = np.array([0.30, 0.35, 0.70, 0.35, 0.50, 0.55, 0.35, 0.75, 0.65, 0.75])
    land = np.zeros((10, L))
    for p in range(5):
        land[2 * p, p] = 1.0
        land[2 * p + 1, p] = 0.5
        land[2 * p + 1, (p + 2) % 5] = 0.87
    attr = np.zeros((12, L))
    names, groups = [], []
    for t in range(10):
        p = t % 5
        attr[t, p] = 0.9
        attr[t, (p + 1) % 5] = 0.44
        names.append(f"g{p}_a{t}")
        groups.append(f"group{p}")
    for t in (10, 11):
        names.append(f"rand_{t}")
        groups.append("random")
    flips = np.full(12, flip)
    return data.SynthSpec(latent_dim=L, n_samples=n, attr_map=attr, landmark_map=land,
                          base_landmarks=base, seed=seed, offset_scale=0.05,
                          landmark_noise=0.01, attr_names=tuple(names),
                          attr_groups=tuple(groups), attr_flip_prob=flips)


NET = NetConfig(input_side=60,
                layers=(LayerSpec(8, 8, 4, True), LayerSpec(2, 16, 1, True)),
                feature_dim=32)


def test_error(ckpt, test_set):
    preds = np.stack([ckpt.state.predict_landmarks(s.image) for s in test_set])
    truths = np.stack([s.landmarks for s in test_set])
    return metrics.evaluate(preds, truths, test_set.layout.eye_points).overall_mean


def run(seed, mode, epochs, eta1, eta2, n_train=2000, n_test=500, **kw):
    spec = planted_spec(n_train + n_test, seed=1000 + seed)
    full = data.generate_synthetic(spec)
    test_set = full.take(range(n_train, len(full)))
    train_set = full.take(range(n_train))
    cfg = trainer.TrainConfig(eta1=eta1, eta2=eta2, batch_size=64, epochs=epochs,
                              strip_sample_every=kw.pop("strip_every", 31),
                              tau=kw.pop("tau", 3),
                              rho=kw.pop("rho", 1.0),
                              validation_fraction=0.1, seed=seed, mode=mode, **kw)
    ckpt, log = trainer.train(train_set, cfg, NET)
    return test_error(ckpt, test_set), ckpt, log


if __name__ == "__main__":
    epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 20
    eta1 = float(sys.argv[2]) if len(sys.argv) > 2 else 0.005
    seeds = range(int(sys.argv[3])) if len(sys.argv) > 3 else range(4)
    eta2 = 1e-5
    for seed in seeds:
        t0 = time.time()
        e_joint, *_ = run(seed, "joint", epochs, eta1, eta2)
        e_fld, *_ = run(seed, "fld_only", epochs, eta1, eta2)
        rel = (e_fld - e_joint) / e_fld
        print(f"seed {seed}: joint {e_joint:.4f} fld {e_fld:.4f} "
              f"rel_improve {100*rel:+.1f}%  ({time.time()-t0:.0f}s)")
