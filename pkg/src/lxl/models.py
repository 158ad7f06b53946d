"""Black-box residual CNN and progressive-growing adversarial autoencoder.

Images cross the public API as H x W x 3 (or N x H x W x 3) float32 arrays in
[0, 1]; internally everything runs NCHW through the autodiff engine.  The AAE
grows 7 -> 14 -> 28 with linear fade-in of each new block; the latent width is
identical at every stage, and the discriminator (on latent vectors) is rebuilt
wider at each stage.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .checkpoint import load_container, save_container
from .errors import ConfigurationError
from .tensor import Tensor, ShapeError

N_CLASSES = 8


# ----------------------------------------------------------------------
# reports

@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    final: dict = field(default_factory=dict)

    def to_jsonl(self):
        import json
        lines = [json.dumps({"kind": "epoch", **e}, sort_keys=True) for e in self.epochs]
        lines.append(json.dumps({"kind": "final", **self.final}, sort_keys=True))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_jsonl(cls, text):
        import json
        report = cls()
        for line in text.splitlines():
            if not line.strip():
                continue
            rec = json.loads(line)
            kind = rec.pop("kind")
            if kind == "epoch":
                report.epochs.append(rec)
            else:
                report.final = rec
        return report


# ----------------------------------------------------------------------
# shared helpers

def _he_conv(rng, cout, cin, k):
    std = np.sqrt(2.0 / (cin * k * k))
    return Tensor(rng.standard_normal((cout, cin, k, k)) * std, requires_grad=True)


def _he_linear(rng, fan_in, fan_out):
    std = np.sqrt(2.0 / fan_in)
    return Tensor(rng.standard_normal((fan_in, fan_out)) * std, requires_grad=True)


def _zeros(*shape):
    return Tensor(np.zeros(shape, dtype=np.float32), requires_grad=True)


def _grads(params):
    return {k: (p.grad if p.grad is not None else np.zeros_like(p.data))
            for k, p in params.items()}


def _nchw(images):
    images = np.asarray(images, dtype=np.float32)
    single = images.ndim == 3
    if single:
        images = images[None]
    return np.transpose(images, (0, 3, 1, 2)), single


def _nhwc(t):
    return np.transpose(t, (0, 2, 3, 1))


def _conv(x, w, b, stride=1, padding=0):
    out = T.conv2d(x, w, stride=stride, padding=padding)
    return out + b.reshape((1, b.size, 1, 1))


def _down2_images(images):
    """2x2 average downsample of an NHWC batch."""
    n, h, w, c = images.shape
    return images.reshape(n, h // 2, 2, w // 2, 2, c).mean(axis=(2, 4)).astype(np.float32)


def balanced_accuracy(predictions, labels):
    """Mean per-class recall; classes absent from ``labels`` are excluded."""
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if predictions.size == 0 or labels.size == 0:
        raise ValueError("balanced_accuracy: empty input")
    if predictions.shape != labels.shape:
        raise ShapeError("balanced_accuracy", labels.shape, predictions.shape)
    recalls = []
    for cls in np.unique(labels):
        mask = labels == cls
        recalls.append(float(np.mean(predictions[mask] == cls)))
    return float(np.mean(recalls))


# ----------------------------------------------------------------------
# black-box classifier

class BlackBox:
    """Small residual CNN with per-class sigmoid outputs."""

    def __init__(self, extent=28, channels=16, n_classes=N_CLASSES, seed=0, params=None):
        self.extent = extent
        self.channels = channels
        self.n_classes = n_classes
        c, c2 = channels, channels * 2
        if params is not None:
            self.params = params
        else:
            rng = np.random.default_rng(seed)
            self.params = {
                "stem.w": _he_conv(rng, c, 3, 3), "stem.b": _zeros(c),
                "res1.c1.w": _he_conv(rng, c, c, 3), "res1.c1.b": _zeros(c),
                "res1.c2.w": _he_conv(rng, c, c, 3), "res1.c2.b": _zeros(c),
                "res2.c1.w": _he_conv(rng, c2, c, 3), "res2.c1.b": _zeros(c2),
                "res2.c2.w": _he_conv(rng, c2, c2, 3), "res2.c2.b": _zeros(c2),
                "res2.proj.w": _he_conv(rng, c2, c, 1), "res2.proj.b": _zeros(c2),
                "res3.c1.w": _he_conv(rng, c2, c2, 3), "res3.c1.b": _zeros(c2),
                "res3.c2.w": _he_conv(rng, c2, c2, 3), "res3.c2.b": _zeros(c2),
                "head.w": _he_linear(rng, c2, n_classes), "head.b": _zeros(n_classes),
            }

    def _resblock(self, x, name, project=False):
        p = self.params
        h = _conv(x, p[f"{name}.c1.w"], p[f"{name}.c1.b"], padding=1).relu()
        h = _conv(h, p[f"{name}.c2.w"], p[f"{name}.c2.b"], padding=1)
        skip = x
        if project:
            skip = _conv(x, p[f"{name}.proj.w"], p[f"{name}.proj.b"])
        return (h + skip).relu()

    def scores_tensor(self, images):
        """Forward pass on an NHWC batch; returns (B, C) sigmoid scores."""
        x, _ = _nchw(images)
        if x.shape[2] != self.extent or x.shape[3] != self.extent or x.shape[1] != 3:
            raise ShapeError("classify", (self.extent, self.extent, 3), x.shape[1:][::-1])
        p = self.params
        h = _conv(Tensor(x - 0.5), p["stem.w"], p["stem.b"], padding=1).relu()
        h = self._resblock(h, "res1")
        h = T.avg_pool2(h)
        h = self._resblock(h, "res2", project=True)
        h = T.avg_pool2(h)
        h = self._resblock(h, "res3")
        h = h.mean(axis=(2, 3))
        return (h @ p["head.w"] + p["head.b"]).sigmoid()


def classify(blackbox, image):
    """Per-class scores in [0,1] for one image or an NHWC batch."""
    _, single = _nchw(image)
    scores = blackbox.scores_tensor(image).data
    return scores[0] if single else scores


def predict_label(blackbox, image):
    return int(np.argmax(classify(blackbox, image))) if np.asarray(image).ndim == 3 \
        else np.argmax(classify(blackbox, image), axis=1)


DEFAULT_CLASSIFIER_CONFIG = {
    "epochs": 25,
    "batch_size": 16,
    "lr": 2e-3,
    "channels": 16,
    "train_fraction": 0.8,
    "augment": False,
}


def train_classifier(dataset, config=None, seed=0):
    """Train the black-box with summed one-vs-rest BCE; deterministic per seed."""
    from .data import split as stratified_split

    cfg = dict(DEFAULT_CLASSIFIER_CONFIG)
    cfg.update(config or {})
    train, val = stratified_split(dataset, cfg["train_fraction"], seed)
    present = set(it.label for it in train.items)
    if present != set(range(N_CLASSES)):
        missing = sorted(set(range(N_CLASSES)) - present)
        raise ConfigurationError(f"classes {missing} absent from train split")

    extent = train.items[0].image.shape[0]
    model = BlackBox(extent=extent, channels=cfg["channels"], seed=seed)
    rng = np.random.default_rng(seed + 1)
    state = T.adam_init(model.params)
    report = TrainReport()

    x_train = train.images()
    y_train = train.labels()
    onehot = np.eye(N_CLASSES, dtype=np.float32)[y_train]
    n = len(x_train)
    bs = cfg["batch_size"]

    for epoch in range(cfg["epochs"]):
        order = rng.permutation(n)
        total, batches = 0.0, 0
        for start in range(0, n, bs):
            idx = order[start:start + bs]
            xb = x_train[idx]
            if cfg["augment"]:
                from .data import augment as _augment
                xb = np.stack([_augment(img, rng) for img in xb])
            scores = model.scores_tensor(xb)
            # one-vs-rest BCE per class, summed over classes
            loss = T.binary_cross_entropy(
                scores.reshape(-1), onehot[idx].reshape(-1)
            ) * N_CLASSES
            loss.backward()
            grads = {k: p.grad for k, p in model.params.items()}
            T.adam_step(model.params, grads, state, lr=cfg["lr"])
            total += float(loss.data)
            batches += 1
        report.epochs.append({
            "epoch": epoch,
            "classifier_loss": total / max(batches, 1),
        })

    preds = np.argmax(classify(model, val.images()), axis=1)
    report.final = {
        "balanced_accuracy": balanced_accuracy(preds, val.labels()),
        "n_train": len(train.items),
        "n_val": len(val.items),
        "seed": seed,
    }
    return model, report


# ----------------------------------------------------------------------
# progressive-growing adversarial autoencoder

@dataclass
class StageSpec:
    extent: int
    epochs: int
    fade_fraction: float = 0.5
    disc_width: int = 64


@dataclass
class GrowthSchedule:
    stages: list

    def validate(self, dataset_extent):
        extents = [s.extent for s in self.stages]
        for a, b in zip(extents, extents[1:]):
            if b != 2 * a:
                raise ConfigurationError(f"stage extents must double: {extents}")
        if extents[-1] != dataset_extent:
            raise ConfigurationError(
                f"final stage extent {extents[-1]} != dataset extent {dataset_extent}"
            )

    @classmethod
    def desk_default(cls, epochs=(12, 12, 16)):
        widths = [64, 128, 256]
        return cls(stages=[
            StageSpec(extent=7 * 2 ** i, epochs=e, fade_fraction=0.5, disc_width=widths[i])
            for i, e in enumerate(epochs)
        ])


class Aae:
    """Encoder/decoder/discriminator triple with a fixed latent width."""

    MBD_KERNELS = 8
    MBD_DIM = 4

    def __init__(self, latent_dim=32, base_channels=16, n_stages=3, seed=0, params=None,
                 stage=1, alpha=1.0):
        self.latent_dim = latent_dim
        self.base_channels = base_channels
        self.n_stages = n_stages
        self.stage = stage          # 1-based growth stage currently active
        self.alpha = alpha          # fade weight of the newest block
        self.disc_width = 64 * 2 ** (stage - 1)
        f = base_channels
        k = latent_dim
        if params is not None:
            self.params = params
            self.disc_width = params["disc.fc1.w"].data.shape[1]
            return
        rng = np.random.default_rng(seed)
        p = {}
        # encoder: per-stage fromRGB entries and downsampling blocks
        for s in range(1, n_stages + 1):
            p[f"enc.fromrgb{s}.w"] = _he_conv(rng, f, 3, 1)
            p[f"enc.fromrgb{s}.b"] = _zeros(f)
            if s >= 2:
                p[f"enc.block{s}.w"] = _he_conv(rng, f, f, 3)
                p[f"enc.block{s}.b"] = _zeros(f)
        p["enc.base.w"] = _he_conv(rng, f, f, 3)
        p["enc.base.b"] = _zeros(f)
        p["enc.fc.w"] = _he_linear(rng, f * 49, k)
        p["enc.fc.b"] = _zeros(k)
        # decoder: mirrored
        p["dec.fc.w"] = _he_linear(rng, k, f * 49)
        p["dec.fc.b"] = _zeros(f * 49)
        p["dec.base.w"] = _he_conv(rng, f, f, 3)
        p["dec.base.b"] = _zeros(f)
        for s in range(1, n_stages + 1):
            p[f"dec.torgb{s}.w"] = _he_conv(rng, 3, f, 1)
            p[f"dec.torgb{s}.b"] = _zeros(3)
            if s >= 2:
                p[f"dec.block{s}.w"] = _he_conv(rng, f, f, 3)
                p[f"dec.block{s}.b"] = _zeros(f)
        self.params = p
        self._init_discriminator(seed=seed + 77)

    def _init_discriminator(self, seed):
        """(Re)build the latent discriminator at the current stage width."""
        rng = np.random.default_rng(seed)
        w = 64 * 2 ** (self.stage - 1)
        self.disc_width = w
        k = self.latent_dim
        self.params["disc.fc1.w"] = _he_linear(rng, k, w)
        self.params["disc.fc1.b"] = _zeros(w)
        self.params["disc.mbd.t"] = Tensor(
            rng.standard_normal((w, self.MBD_KERNELS * self.MBD_DIM)) * 0.1,
            requires_grad=True,
        )
        self.params["disc.fc2.w"] = _he_linear(rng, w + self.MBD_KERNELS, 1)
        self.params["disc.fc2.b"] = _zeros(1)

    def grow(self, seed):
        if self.stage >= self.n_stages:
            raise ConfigurationError("already at final stage")
        self.stage += 1
        self.alpha = 0.0
        self._init_discriminator(seed=seed)

    @property
    def extent(self):
        return 7 * 2 ** (self.stage - 1)

    def param_group(self, prefix):
        return {k: v for k, v in self.params.items() if k.startswith(prefix)}

    # -------------------- forward passes --------------------

    def encode_tensor(self, images, alpha=None):
        alpha = self.alpha if alpha is None else alpha
        x, _ = _nchw(images)
        if x.shape[2] != self.extent or x.shape[3] != self.extent:
            raise ShapeError("encode", (self.extent, self.extent, 3), x.shape[1:][::-1])
        p = self.params
        s = self.stage
        xt = Tensor(x)

        def entry(stage_idx, inp):
            return _conv(inp, p[f"enc.fromrgb{stage_idx}.w"], p[f"enc.fromrgb{stage_idx}.b"]).leaky_relu()

        def block(stage_idx, feat):
            h = _conv(feat, p[f"enc.block{stage_idx}.w"], p[f"enc.block{stage_idx}.b"], padding=1)
            return T.avg_pool2(h.leaky_relu())

        if s == 1:
            feat = entry(1, xt)
        else:
            hi = block(s, entry(s, xt))
            lo = entry(s - 1, Tensor(np.transpose(_down2_images(_nhwc(x)), (0, 3, 1, 2))))
            feat = hi * float(alpha) + lo * float(1.0 - alpha)
            for t_stage in range(s - 1, 1, -1):
                feat = block(t_stage, feat)
        feat = _conv(feat, p["enc.base.w"], p["enc.base.b"], padding=1).leaky_relu()
        flat = feat.reshape((feat.shape[0], -1))
        return flat @ p["enc.fc.w"] + p["enc.fc.b"]

    def decode_tensor(self, z, alpha=None):
        alpha = self.alpha if alpha is None else alpha
        if not isinstance(z, Tensor):
            z = Tensor(np.asarray(z, np.float32))
        if z.data.ndim == 1:
            z = z.reshape((1, -1))
        if z.data.shape[1] != self.latent_dim:
            raise ShapeError("decode", (self.latent_dim,), z.data.shape[1:])
        p = self.params
        s = self.stage
        f = self.base_channels
        h = (z @ p["dec.fc.w"] + p["dec.fc.b"]).leaky_relu()
        feat = h.reshape((h.shape[0], f, 7, 7))
        feat = _conv(feat, p["dec.base.w"], p["dec.base.b"], padding=1).leaky_relu()
        feats = [feat]
        for t_stage in range(2, s + 1):
            up = T.upsample_nearest2(feats[-1])
            feats.append(
                _conv(up, p[f"dec.block{t_stage}.w"], p[f"dec.block{t_stage}.b"], padding=1).leaky_relu()
            )

        def torgb(stage_idx, feat_):
            return _conv(feat_, p[f"dec.torgb{stage_idx}.w"], p[f"dec.torgb{stage_idx}.b"]).sigmoid()

        if s == 1:
            return torgb(1, feats[0])
        hi = torgb(s, feats[-1])
        lo = T.upsample_nearest2(torgb(s - 1, feats[-2]))
        return hi * float(alpha) + lo * float(1.0 - alpha)

    def discriminate_tensor(self, z):
        if not isinstance(z, Tensor):
            z = Tensor(np.asarray(z, np.float32))
        if z.data.ndim == 1:
            z = z.reshape((1, -1))
        p = self.params
        h = (z @ p["disc.fc1.w"] + p["disc.fc1.b"]).leaky_relu()
        if h.data.shape[0] >= 2:
            h = minibatch_discrimination(h, p["disc.mbd.t"], self.MBD_KERNELS, self.MBD_DIM)
        else:
            # empty cross-batch sum for a singleton batch
            h = T.concat([h, Tensor(np.zeros((1, self.MBD_KERNELS), np.float32))], axis=1)
        return (h @ p["disc.fc2.w"] + p["disc.fc2.b"]).sigmoid()


def encode(aae, image):
    """Latent vector(s) for one image or an NHWC batch."""
    single = np.asarray(image).ndim == 3
    z = aae.encode_tensor(image).data
    return z[0] if single else z


def decode(aae, z):
    """Image(s) in [0,1] for one latent vector or a batch."""
    z = np.asarray(z, np.float32)
    single = z.ndim == 1
    out = _nhwc(aae.decode_tensor(z).data)
    return out[0] if single else out


def discriminate(aae, z):
    """Discriminator score(s) in [0,1]."""
    z = np.asarray(z, np.float32)
    single = z.ndim == 1
    scores = aae.discriminate_tensor(z).data[:, 0]
    return float(scores[0]) if single else scores


def minibatch_discrimination(features, projection, n_kernels, kernel_dim):
    """Append cross-batch similarity statistics to a (B, A) feature tensor.

    Projects features to (B, n_kernels, kernel_dim), takes negative-exponential
    of pairwise L1 distances per kernel and sums over the rest of the batch.
    """
    if not isinstance(features, Tensor):
        features = Tensor(np.asarray(features, np.float32))
    b = features.data.shape[0]
    if b < 2:
        raise ShapeError("minibatch_discrimination", "batch size >= 2", b)
    m = (features @ projection).reshape((b, n_kernels, kernel_dim))
    left = m.reshape((b, 1, n_kernels, kernel_dim))
    right = m.reshape((1, b, n_kernels, kernel_dim))
    l1 = (left - right).abs().sum(axis=3)        # (B, B, n_kernels)
    sims = (-l1).exp().sum(axis=1) - 1.0         # exclude the self term exp(0)
    return T.concat([features, sims], axis=1)


DEFAULT_AAE_CONFIG = {
    "batch_size": 16,
    "lr": 2e-3,
    "adv_lr": 5e-4,
    "noise_sigma": 0.1,
    "latent_dim": 32,
    "base_channels": 16,
}


def train_pgaae(dataset, schedule, config=None, seed=0):
    """Stage-wise denoising reconstruction + adversarial latent regularization."""
    cfg = dict(DEFAULT_AAE_CONFIG)
    cfg.update(config or {})
    images = dataset.images()
    extent = images.shape[1]
    schedule.validate(extent)

    # image pyramid, one entry per stage
    pyramid = {extent: images}
    cur = images
    for spec in reversed(schedule.stages[:-1]):
        cur = _down2_images(cur)
        pyramid[spec.extent] = cur

    aae = Aae(latent_dim=cfg["latent_dim"], base_channels=cfg["base_channels"],
              n_stages=len(schedule.stages), seed=seed)
    rng = np.random.default_rng(seed + 13)
    report = TrainReport()
    k = aae.latent_dim
    bs = cfg["batch_size"]

    for stage_idx, spec in enumerate(schedule.stages):
        if stage_idx > 0:
            aae.grow(seed=seed + 1000 + stage_idx)
        assert aae.latent_dim == k  # latent width is stage-invariant
        x_stage = pyramid[spec.extent]
        n = len(x_stage)
        ae_params = {**aae.param_group("enc."), **aae.param_group("dec.")}
        enc_params = aae.param_group("enc.")
        disc_params = aae.param_group("disc.")
        ae_state = T.adam_init(ae_params)
        enc_state = T.adam_init(enc_params)
        disc_state = T.adam_init(disc_params)
        fade_epochs = max(1, int(np.ceil(spec.fade_fraction * spec.epochs)))

        for epoch in range(spec.epochs):
            if stage_idx == 0:
                aae.alpha = 1.0
            else:
                aae.alpha = min(1.0, (epoch + 1) / fade_epochs)
            order = rng.permutation(n)
            sums = {"recon": 0.0, "disc": 0.0, "gen": 0.0}
            batches = 0
            for start in range(0, n, bs):
                idx = order[start:start + bs]
                if len(idx) < 2:
                    continue
                xb = x_stage[idx]

                # (a) denoising reconstruction
                noisy = np.clip(
                    xb + rng.normal(0.0, cfg["noise_sigma"], xb.shape), 0.0, 1.0
                ).astype(np.float32)
                z = aae.encode_tensor(noisy)
                recon = aae.decode_tensor(z)
                target = np.transpose(xb, (0, 3, 1, 2))
                diff = recon - Tensor(target)
                recon_loss = (diff * diff).mean()
                recon_loss.backward()
                T.adam_step(ae_params, _grads(ae_params), ae_state, lr=cfg["lr"])

                # (b) adversarial regularization: discriminator step
                z_fake = aae.encode_tensor(xb).data  # detached
                z_prior = rng.standard_normal((len(idx), k)).astype(np.float32)
                d_real = aae.discriminate_tensor(z_prior)
                d_fake = aae.discriminate_tensor(Tensor(z_fake))
                d_loss = T.binary_cross_entropy(d_real.reshape(-1), np.ones(len(idx), np.float32)) \
                    + T.binary_cross_entropy(d_fake.reshape(-1), np.zeros(len(idx), np.float32))
                d_loss.backward()
                T.adam_step(disc_params, _grads(disc_params), disc_state, lr=cfg["adv_lr"])

                # encoder (generator) step: fool the discriminator
                z_gen = aae.encode_tensor(xb)
                g_scores = aae.discriminate_tensor(z_gen)
                g_loss = T.binary_cross_entropy(g_scores.reshape(-1), np.ones(len(idx), np.float32))
                g_loss.backward()
                T.adam_step(enc_params, _grads(enc_params), enc_state, lr=cfg["adv_lr"])

                sums["recon"] += float(recon_loss.data)
                sums["disc"] += float(d_loss.data)
                sums["gen"] += float(g_loss.data)
                batches += 1
            report.epochs.append({
                "stage": stage_idx + 1,
                "extent": spec.extent,
                "epoch": epoch,
                "alpha": aae.alpha,
                "reconstruction_loss": sums["recon"] / max(batches, 1),
                "discriminator_loss": sums["disc"] / max(batches, 1),
                "generator_loss": sums["gen"] / max(batches, 1),
            })

    rmse = reconstruction_rmse(aae, dataset)
    report.final = {
        "per_class_rmse": rmse,
        "diversity_score": diversity_score(aae, seed=seed + 999),
        "stages": len(schedule.stages),
        "seed": seed,
    }
    return aae, report


def reconstruction_rmse(aae, dataset):
    """Per-class root mean squared pixel error of the encode/decode round trip."""
    out = {}
    for label, name in enumerate(dataset.class_names):
        imgs = np.stack([it.image for it in dataset.items if it.label == label]) \
            if any(it.label == label for it in dataset.items) else None
        if imgs is None:
            warnings.warn(f"class {name} empty; omitted from RMSE map")
            continue
        recon = decode(aae, encode(aae, imgs))
        out[name] = float(np.sqrt(np.mean((recon - imgs) ** 2)))
    return out


def diversity_score(aae, n_samples=64, seed=0):
    """Mean pairwise L2 distance among decoded prior samples (mode-collapse probe)."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n_samples, aae.latent_dim)).astype(np.float32)
    imgs = decode(aae, z).reshape(n_samples, -1)
    dists = np.sqrt(((imgs[:, None, :] - imgs[None, :, :]) ** 2).sum(axis=2))
    iu = np.triu_indices(n_samples, k=1)
    return float(dists[iu].mean())


# ----------------------------------------------------------------------
# checkpoints

def save_blackbox(model, path):
    meta = {
        "kind": "blackbox",
        "extent": model.extent,
        "channels": model.channels,
        "n_classes": model.n_classes,
    }
    save_container(path, meta, {k: p.data for k, p in model.params.items()})


def load_blackbox(path):
    meta, arrays = load_container(path)
    if meta.get("kind") != "blackbox":
        raise ConfigurationError(f"{path} is not a black-box checkpoint")
    params = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
    return BlackBox(extent=meta["extent"], channels=meta["channels"],
                    n_classes=meta["n_classes"], params=params)


def save_aae(aae, path):
    meta = {
        "kind": "aae",
        "latent_dim": aae.latent_dim,
        "base_channels": aae.base_channels,
        "n_stages": aae.n_stages,
        "stage": aae.stage,
        "alpha": aae.alpha,
    }
    save_container(path, meta, {k: p.data for k, p in aae.params.items()})


def load_aae(path):
    meta, arrays = load_container(path)
    if meta.get("kind") != "aae":
        raise ConfigurationError(f"{path} is not an AAE checkpoint")
    params = {k: Tensor(v, requires_grad=True) for k, v in arrays.items()}
    return Aae(latent_dim=meta["latent_dim"], base_channels=meta["base_channels"],
               n_stages=meta["n_stages"], stage=meta["stage"], alpha=meta["alpha"],
               params=params)
