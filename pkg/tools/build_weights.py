"""Build the shipped metric weight files (deterministic).

Convolution weights are seeded He-normal draws.  Heads are ridge-fitted on
the bundled training images and noisy/blurred copies of them, regressing a
PSNR-derived quality target, so that scores mean "cleaner is higher".
Sharpened and contrast-stretched copies are labelled slightly above their
clean originals, giving the heads the preference for crisp, contrasty
texture that trained no-reference metrics typically have.
The naturalness prior is the feature mean/std over the clean training images.
"""

import glob
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import gaussian_filter

from iqarobust.gradcore import Evaluation, Graph, save_weights
from iqarobust.metrics import zoo
from iqarobust.metrics.proxy import mse, psnr_from_mse

ROOT = Path(__file__).resolve().parents[1]
FIXTURE = ROOT / "src" / "iqarobust" / "data" / "fixture"


def load(pattern):
    return [np.asarray(Image.open(f), dtype=np.float64) / 255.0 for f in sorted(glob.glob(pattern))]


def distorted_set(images, rng):
    out = []
    for img in images:
        out.append(img)
        for sigma in (0.02, 0.05, 0.1):
            out.append(np.clip(img + rng.normal(0, sigma, img.shape), 0, 1))
        k = np.ones(3) / 3
        blur = np.apply_along_axis(lambda r: np.convolve(np.pad(r, 1, mode="edge"), k, "valid"), 0, img)
        blur = np.apply_along_axis(lambda r: np.convolve(np.pad(r, 1, mode="edge"), k, "valid"), 1, blur)
        out.append(blur)
    return out


def quality_targets(images, clean_count_per=5):
    targets = []
    for k, img in enumerate(images):
        ref = images[k - k % clean_count_per]
        m = mse(ref, img)
        targets.append(1.0 if m == 0 else min(psnr_from_mse(m) / 40.0, 1.0))
    return np.array(targets)


def enhanced_set(images):
    """Unsharp-masked and contrast-stretched copies with targets just above clean."""
    out, targets = [], []
    for img in images:
        blur = gaussian_filter(img, (1, 1, 0), mode="reflect")
        for amount, target in ((0.5, 1.05), (1.0, 1.1), (2.0, 1.15)):
            out.append(np.clip(img + amount * (img - blur), 0, 1))
            targets.append(target)
        mean = img.mean()
        for gain, target in ((1.3, 1.05), (1.6, 1.1)):
            out.append(np.clip(mean + gain * (img - mean), 0, 1))
            targets.append(target)
    return out, targets


def he_normal(rng, shape):
    fan_in = int(np.prod(shape[:-1]))
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)


def ridge(features, targets, lam=1e-3):
    X = np.hstack([features, np.ones((len(features), 1))])
    reg = lam * np.eye(X.shape[1])
    reg[-1, -1] = 0.0
    coef = np.linalg.solve(X.T @ X + reg, X.T @ targets)
    return coef[:-1], coef[-1]


def feature_matrix(build_node, images):
    g = Graph()
    g.set_output(build_node(g, g.input("image")))
    return np.array([Evaluation(g).forward({"image": im}).ravel() for im in images])


def main():
    rng = np.random.default_rng(7)
    train = load(str(FIXTURE / "train-*" / "*.png"))
    data = distorted_set(train, np.random.default_rng(8))
    enhanced, enhanced_targets = enhanced_set(train)
    targets = np.concatenate([quality_targets(data), enhanced_targets])
    data = data + enhanced
    out = ROOT / "src" / "iqarobust" / "metrics" / "weights"
    out.mkdir(parents=True, exist_ok=True)

    w = {}
    for layer in zoo.TINY_CNN_LAYERS[:6]:
        w[layer["name"]] = (he_normal(rng, layer["shape"]) if layer["initializer"] == "he_normal"
                            else np.zeros(layer["shape"]))
    feats = feature_matrix(lambda g, x: zoo.tiny_cnn_features(g, x, w), data)
    coef, bias = ridge(feats, targets)
    w["head.w"], w["head.b"] = coef.reshape(16, 1), np.array([bias])
    layers = [{**lay, "initializer": f"{lay['initializer']}(seed=7)"} for lay in zoo.TINY_CNN_LAYERS]
    save_weights(out / "tiny-cnn-nr.json", layers, w)

    w = {}
    for layer in zoo.PATCH_LAYERS:
        init = layer["initializer"]
        if init == "he_normal":
            w[layer["name"]] = he_normal(rng, layer["shape"])
        elif init.startswith("normal"):
            w[layer["name"]] = rng.normal(0.0, 0.5, layer["shape"])
        else:
            w[layer["name"]] = np.zeros(layer["shape"])

    def pooled(g, x):
        x = zoo.InputPolicy("center-crop", 24).apply(g, x, (32, 32, 3))
        h, weights = zoo.patch_branches(g, x, w)
        return g.div(g.sum(g.mul(h, weights), axis=(0, 1)), g.sum(weights))

    coef, bias = ridge(feature_matrix(pooled, data), targets)
    w["quality.w"], w["quality.b"] = coef.reshape(1, 1, 8, 1), np.array([bias])
    layers = [{**lay, "initializer": f"{lay['initializer']}(seed=7)"} for lay in zoo.PATCH_LAYERS]
    save_weights(out / "patch-weighted.json", layers, w)

    values = []
    for img in train:
        g = Graph()
        nodes = zoo.naturalness_features(g, g.input("image"))
        g.set_output(nodes[0])
        ev = Evaluation(g)
        ev.forward({"image": img})
        values.append([float(ev.values[n]) for n in nodes])
    values = np.array(values)
    w = {"prior.mean": values.mean(axis=0), "prior.scale": values.std(axis=0) + 1e-3}
    save_weights(out / "naturalness-lite.json", zoo.NATURALNESS_LAYERS, w,
                 extra={"features": list(zoo.NATURALNESS_FEATURES)})
    print(f"wrote weights to {out}")


if __name__ == "__main__":
    main()
