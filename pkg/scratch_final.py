"""Final measurement of the ablation recipe across 10 seeds."""
import sys
import time

import numpy as np

from tcmtl import data, metrics, trainer
from tcmtl.network import LayerSpec, NetConfig

NET = NetConfig(60, (LayerSpec(8, 8, 4, True), LayerSpec(2, 16, 1, True)), 48)
AMPS = np.array([1.0, 0.45, 0.75, 0.3, 0.6])
BASE = np.array([0.30, 0.35, 0.70, 0.35, 0.50, 0.55, 0.35, 0.75, 0.65, 0.75])


def planted_spec(n, seed, landmark_noise=0.0, flip=0.12):
    L = 5
    land = np.zeros((10, L))
    for p in range(5):
        land[2 * p, p] = 1.0
        land[2 * p + 1, p] = 0.5
        land[2 * p + 1, (p + 2) % 5] = 0.87
    attr = np.zeros((12, L))
    th = np.zeros(12)
    fl = np.zeros(12)
    names, groups = [], []
    for t in range(10):
        p = t % 5
        attr[t, p] = 1.0
        th[t] = -0.4 if t < 5 else 0.4
        fl[t] = flip
        names.append(f"g{p}_a{t}")
        groups.append(f"group{p}")
    for t in (10, 11):
        names.append(f"rand_{t}")
        groups.append("random")
    return data.SynthSpec(latent_dim=L, n_samples=n, attr_map=attr, landmark_map=land,
                          base_landmarks=BASE, seed=seed, offset_scale=0.05,
                          landmark_noise=landmark_noise, attr_names=tuple(names),
                          attr_groups=tuple(groups), attr_thresholds=th,
                          attr_flip_prob=fl, blob_sigma=0.12, blob_amplitudes=AMPS)


def ablation_config(mode, seed, epochs=35, **kw):
    defaults = dict(eta1=0.0045, eta2=1e-6, batch_size=16, epochs=epochs,
                    strip_sample_every=28, tau=2, rho=5.0,
                    divergence_factor=50.0, validation_fraction=0.1,
                    seed=seed, mode=mode)
    defaults.update(kw)
    return trainer.TrainConfig(**defaults)


def test_error(ckpt, test_set):
    preds = np.stack([ckpt.state.predict_landmarks(s.image) for s in test_set])
    truths = np.stack([s.landmarks for s in test_set])
    return metrics.evaluate(preds, truths, test_set.layout.eye_points).overall_mean


if __name__ == "__main__":
    epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 35
    n_seeds = int(sys.argv[2]) if len(sys.argv) > 2 else 10
    rels = []
    for seed in range(n_seeds):
        tr = data.generate_synthetic(planted_spec(2000, 1000 + seed))
        te = data.generate_synthetic(planted_spec(500, 8000 + seed, flip=0.0))
        t0 = time.time()
        ck_f, _ = trainer.train(tr, ablation_config("fld_only", seed, epochs), NET)
        ck_j, _ = trainer.train(tr, ablation_config("joint", seed, epochs), NET)
        e_f, e_j = test_error(ck_f, te), test_error(ck_j, te)
        rels.append(100 * (e_f - e_j) / e_f)
        print(f"seed {seed}: fld={e_f:.4f} joint={e_j:.4f} rel={rels[-1]:+.1f}% "
              f"({time.time()-t0:.0f}s)", flush=True)
    print("median", round(float(np.median(rels)), 2),
          "wins", sum(r > 0 for r in rels), "/", n_seeds)
