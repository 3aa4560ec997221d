"""Training loop: critic/reconstruction inner loop, generator and mask-net
steps, checkpointing, and the loss trace.

Update scoping is strict: every step computes one scalar loss and applies
Adam to exactly its declared parameter sets, leaving all other networks
bitwise untouched. One outer iteration runs ``n_critic`` (critic step then
reconstruction step) pairs, one generator step, one mask-net step. A
supervised mask-net pretraining phase precedes the adversarial loop.

Determinism: given a dataset and a config, every run consumes the single
seeded generator in the same order, so loss traces are bitwise reproducible
and a resumed run continues the interrupted one exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, adam_step, backward, no_grad
from .checkpoint import CheckpointBlob, load_checkpoint, save_checkpoint
from .config import TrainConfig, parse_config_text
from .errors import ConfigurationError, NumericError, TrainingAborted
from .networks import (
    Critic,
    Decoder,
    Encoder,
    Interpolator,
    MaskNet,
    interpolate,
)
from .objectives import (
    FeatureBatchPair,
    loss_critic,
    loss_generator_adv,
    loss_reconstruction,
    loss_shape,
    loss_unet_supervised,
)
from .seeds import derive_seed
from .synth import Dataset

NET_NAMES = ("encoder", "decoder", "interpolator", "critic", "unet")
_ITERATION_KEY = "iteration"
_EARLY_STOP_WINDOW = 100
_EARLY_STOP_DELTA = 1e-4


@dataclass
class NetBundle:
    encoder: Encoder
    decoder: Decoder
    interpolator: Interpolator
    critic: Critic
    unet: MaskNet

    def param_sets(self) -> dict:
        return {name: getattr(self, name).params for name in NET_NAMES}


@dataclass
class TrainerState:
    nets: NetBundle
    adam: dict[str, AdamState]
    rng: np.random.Generator
    iteration: int = 0


@dataclass
class TrainResult:
    state: TrainerState
    trace_rows: list[tuple]
    checkpoint_path: Path | None = None


def build_nets(config: TrainConfig, in_channels: int, seed: int) -> NetBundle:
    encoder = Encoder.build(in_channels, config.image_size, derive_seed(seed, 101))
    decoder = Decoder.build(in_channels, config.image_size, derive_seed(seed, 102))
    interp = Interpolator.build(seed=derive_seed(seed, 103))
    critic = Critic.for_feature_shape(encoder.feature_shape, seed=derive_seed(seed, 104))
    unet = MaskNet.build(in_channels, seed=derive_seed(seed, 105))
    return NetBundle(encoder, decoder, interp, critic, unet)


def build_adam(config: TrainConfig, nets: NetBundle) -> dict[str, AdamState]:
    lrs = {
        "encoder": config.lr_encoder,
        "decoder": config.lr_decoder,
        "interpolator": config.lr_interpolator,
        "critic": config.lr_critic,
        "unet": config.lr_unet,
    }
    return {
        name: AdamState.for_params(
            ps,
            lrs[name],
            config.adam_beta1,
            config.adam_beta2,
            config.adam_epsilon,
        )
        for name, ps in nets.param_sets().items()
    }


# ---------------------------------------------------------------------------
# individual steps

def critic_step(
    batch_x: np.ndarray,
    batch_y: np.ndarray,
    nets: NetBundle,
    config: TrainConfig,
    adam: dict[str, AdamState],
    rng: np.random.Generator,
) -> float:
    """One critic update on detached features; returns the loss value.

    Real samples are the target-domain features, fakes the learned
    interpolations toward them; both are constants here so only the critic
    receives gradient.
    """
    n = batch_x.shape[0]
    alphas = 1.0 - rng.random(n)
    with no_grad():
        fx = nets.encoder(ad.as_tensor(batch_x))
        fy = nets.encoder(ad.as_tensor(batch_y))
        fake = interpolate(fx, fy, alphas, "learned", nets.interpolator)
    eps = rng.random(n)
    loss = loss_critic(
        FeatureBatchPair(fy, fake), nets.critic, eps, config.lambda_gp
    )
    grads = backward(loss, nets.critic.params.tensors())
    adam_step(nets.critic.params, grads, adam["critic"])
    return loss.item()


def reconstruction_step(
    batch: np.ndarray,
    nets: NetBundle,
    config: TrainConfig,
    adam: dict[str, AdamState],
) -> float:
    """Autoencoding update for the decoder (and encoder unless disabled).

    Returns the unweighted mean squared error.
    """
    images = ad.as_tensor(batch)
    mse = loss_reconstruction(images, nets.decoder(nets.encoder(images)))
    total = ad.scalar_mul(mse, config.lambda_rec)
    wrt = list(nets.decoder.params.tensors())
    n_dec = len(wrt)
    if config.recon_updates_encoder:
        wrt += nets.encoder.params.tensors()
    grads = backward(total, wrt)
    adam_step(nets.decoder.params, grads[:n_dec], adam["decoder"])
    if config.recon_updates_encoder:
        adam_step(nets.encoder.params, grads[n_dec:], adam["encoder"])
    return mse.item()


def generator_step(
    batch_x: np.ndarray,
    batch_y: np.ndarray,
    nets: NetBundle,
    config: TrainConfig,
    adam: dict[str, AdamState],
    rng: np.random.Generator,
    masks_x: np.ndarray | None = None,
) -> tuple[float, float]:
    """Adversarial + shape update for encoder, interpolator, and decoder.

    The critic and mask net participate in the loss but are excluded from the
    update. Returns (adversarial term, shape term); the shape term is 0.0
    when its weight is zero (the step is then purely adversarial).
    """
    n = batch_x.shape[0]
    alphas = 1.0 - rng.random(n)
    x = ad.as_tensor(batch_x)
    fx = nets.encoder(x)
    fy = nets.encoder(ad.as_tensor(batch_y))
    fake = interpolate(fx, fy, alphas, "learned", nets.interpolator)
    adv = loss_generator_adv(fake, nets.critic)
    total = ad.scalar_mul(adv, config.lambda_adv)
    shape_value = 0.0
    if config.lambda_shape > 0.0:
        translated = nets.decoder(fake)
        reference = None
        if config.shape_reference == "ground_truth":
            if masks_x is None:
                raise ConfigurationError(
                    "shape_reference=ground_truth needs source masks"
                )
            reference = masks_x
        shape = loss_shape(translated, x, nets.unet, reference)
        total = ad.add(total, ad.scalar_mul(shape, config.lambda_shape))
        shape_value = shape.item()

    wrt = []
    counts = []
    for name in ("encoder", "interpolator", "decoder"):
        ts = getattr(nets, name).params.tensors()
        wrt += ts
        counts.append(len(ts))
    grads = backward(total, wrt)
    off = 0
    for name, cnt in zip(("encoder", "interpolator", "decoder"), counts):
        adam_step(getattr(nets, name).params, grads[off : off + cnt], adam[name])
        off += cnt
    return adv.item(), shape_value


def unet_step(
    batch: np.ndarray,
    gt_masks: np.ndarray,
    nets: NetBundle,
    config: TrainConfig,
    adam: dict[str, AdamState],
) -> float:
    """Supervised Dice update for the mask net only."""
    pred = nets.unet(ad.as_tensor(batch))
    loss = loss_unet_supervised(pred, ad.as_tensor(gt_masks))
    grads = backward(loss, nets.unet.params.tensors())
    adam_step(nets.unet.params, grads, adam["unet"])
    return loss.item()


# ---------------------------------------------------------------------------
# state <-> checkpoint

def state_to_blob(state: TrainerState, config: TrainConfig) -> CheckpointBlob:
    tensors: dict[str, np.ndarray] = {}
    for name, ps in state.nets.param_sets().items():
        for key, t in ps.items():
            tensors[f"{name}/{key}"] = t.data.copy()
    for name in NET_NAMES:
        st = state.adam[name]
        for key in state.nets.param_sets()[name].names():
            tensors[f"adam/{name}/{key}.m"] = st.m[key].copy()
            tensors[f"adam/{name}/{key}.v"] = st.v[key].copy()
        tensors[f"adam/{name}/step"] = np.array(float(st.step))
    config_text = config.to_text() + f"{_ITERATION_KEY} = {state.iteration}\n"
    rng_state = state.rng.bit_generator.state
    return CheckpointBlob(tensors, config_text, rng_state)


def blob_to_state(blob: CheckpointBlob) -> tuple[TrainerState, TrainConfig]:
    mapping = parse_config_text(blob.config_text)
    iteration = int(mapping.pop(_ITERATION_KEY, "0"))
    config = TrainConfig.from_mapping(mapping)
    try:
        in_channels = int(blob.tensors["encoder/conv0.w"].shape[1])
    except KeyError:
        raise ConfigurationError("checkpoint lacks encoder parameters") from None
    nets = build_nets(config, in_channels, config.seed)
    for name, ps in nets.param_sets().items():
        prefix = f"{name}/"
        ps.load(
            {
                key[len(prefix):]: arr
                for key, arr in blob.tensors.items()
                if key.startswith(prefix) and not key.startswith("adam/")
            }
        )
    adam = build_adam(config, nets)
    for name in NET_NAMES:
        st = adam[name]
        st.step = int(blob.tensors[f"adam/{name}/step"].reshape(())[()])
        for key in nets.param_sets()[name].names():
            st.m[key] = blob.tensors[f"adam/{name}/{key}.m"].copy()
            st.v[key] = blob.tensors[f"adam/{name}/{key}.v"].copy()
    rng = np.random.Generator(np.random.PCG64(0))
    rng.bit_generator.state = blob.rng_state
    return TrainerState(nets, adam, rng, iteration), config


def save_state(path, state: TrainerState, config: TrainConfig) -> Path:
    return save_checkpoint(path, state_to_blob(state, config))


def load_state(path) -> tuple[TrainerState, TrainConfig]:
    return blob_to_state(load_checkpoint(path))


# ---------------------------------------------------------------------------
# the loop

def format_trace_row(row: tuple) -> str:
    it, critic, recon, adv, shape, unet = row
    return f"{it},{critic!r},{recon!r},{adv!r},{shape!r},{unet!r}"


def trace_to_text(rows: Sequence[tuple]) -> str:
    return "\n".join(format_trace_row(r) for r in rows) + ("\n" if rows else "")


def _validate_dataset(dataset: Dataset, config: TrainConfig) -> list[int]:
    domains = dataset.domain_ids
    if len(domains) < 2:
        raise ConfigurationError("training needs at least two domains")
    for d in domains:
        if len(dataset.train_indices(d)) < config.batch_size:
            raise ConfigurationError(
                f"domain {d} has fewer training samples than batch_size"
                f"={config.batch_size}"
            )
    if dataset.size != config.image_size:
        raise ConfigurationError(
            f"dataset images are {dataset.size}x{dataset.size} but config expects"
            f" {config.image_size}"
        )
    return domains


def _draw(rng, indices: np.ndarray, n: int) -> np.ndarray:
    return rng.choice(indices, size=n, replace=False)


def run_training(
    dataset: Dataset,
    config: TrainConfig,
    out_dir=None,
    resume: CheckpointBlob | None = None,
    observer: Callable[[str, int], None] | None = None,
) -> TrainResult:
    """Run (or resume) a full training; returns final state and the trace.

    With ``out_dir`` set, writes periodic checkpoints, a final checkpoint,
    the resolved config, and the loss trace. A numeric error aborts with
    :class:`TrainingAborted` after writing the last good state.
    """
    if resume is not None:
        # the checkpoint's own config governs the continued run
        state, config = blob_to_state(resume)
    config.validate()
    domains = _validate_dataset(dataset, config)
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config_resolved.txt").write_text(config.to_text())

    if resume is None:
        nets = build_nets(config, dataset.channels, config.seed)
        state = TrainerState(
            nets,
            build_adam(config, nets),
            np.random.Generator(np.random.PCG64(derive_seed(config.seed, 7))),
            iteration=0,
        )

    notify = observer if observer is not None else (lambda kind, it: None)
    train_all = dataset.train_indices()
    train_by_domain = {d: dataset.train_indices(d) for d in domains}
    rng = state.rng
    nets = state.nets
    adam = state.adam

    last_good = state_to_blob(state, config)

    def abort(exc: NumericError, iteration: int):
        path = None
        if out is not None:
            path = save_checkpoint(out / "last_good.sgck", last_good)
            _write_trace(out, trace_rows)
        raise TrainingAborted(
            f"numeric error at iteration {iteration}: {exc}", iteration, path
        ) from exc

    trace_rows: list[tuple] = []

    if resume is None and config.unet_pretrain_iters > 0:
        for i in range(config.unet_pretrain_iters):
            sel = _draw(rng, train_all, config.batch_size)
            try:
                unet_step(dataset.images[sel], dataset.masks[sel], nets, config, adam)
            except NumericError as exc:
                abort(exc, 0)
            notify("unet_pretrain_step", 0)
        last_good = state_to_blob(state, config)

    recon_history: list[float] = []
    for it in range(state.iteration + 1, config.max_iterations + 1):
        try:
            dx = int(domains[rng.integers(len(domains))])
            dy = int(
                domains[
                    (domains.index(dx) + 1 + int(rng.integers(len(domains) - 1)))
                    % len(domains)
                ]
            )
            critic_losses = []
            recon_losses = []
            for _ in range(config.n_critic):
                bx = _draw(rng, train_by_domain[dx], config.batch_size)
                by = _draw(rng, train_by_domain[dy], config.batch_size)
                critic_losses.append(
                    critic_step(
                        dataset.images[bx], dataset.images[by], nets, config, adam, rng
                    )
                )
                notify("critic_step", it)
                br = _draw(rng, train_all, config.batch_size)
                recon_losses.append(
                    reconstruction_step(dataset.images[br], nets, config, adam)
                )
                notify("reconstruction_step", it)
            gx = _draw(rng, train_by_domain[dx], config.batch_size)
            gy = _draw(rng, train_by_domain[dy], config.batch_size)
            adv_value, shape_value = generator_step(
                dataset.images[gx],
                dataset.images[gy],
                nets,
                config,
                adam,
                rng,
                masks_x=dataset.masks[gx],
            )
            notify("generator_step", it)
            bu = _draw(rng, train_all, config.batch_size)
            unet_value = unet_step(
                dataset.images[bu], dataset.masks[bu], nets, config, adam
            )
            notify("unet_step", it)
        except NumericError as exc:
            abort(exc, it)

        state.iteration = it
        row = (
            it,
            float(np.mean(critic_losses)),
            float(np.mean(recon_losses)),
            adv_value,
            shape_value,
            unet_value,
        )
        trace_rows.append(row)
        recon_history.append(row[2])
        notify("iteration_end", it)
        last_good = state_to_blob(state, config)
        if out is not None and it % config.checkpoint_every == 0:
            save_checkpoint(out / f"ckpt_{it:06d}.sgck", last_good)
        if config.early_stop and len(recon_history) >= 2 * _EARLY_STOP_WINDOW:
            now = float(np.mean(recon_history[-_EARLY_STOP_WINDOW:]))
            prev = float(
                np.mean(
                    recon_history[-2 * _EARLY_STOP_WINDOW : -_EARLY_STOP_WINDOW]
                )
            )
            if abs(now - prev) < _EARLY_STOP_DELTA:
                break

    final_path = None
    if out is not None:
        final_path = save_checkpoint(out / "final.sgck", state_to_blob(state, config))
        _write_trace(out, trace_rows)
    return TrainResult(state, trace_rows, final_path)


def _write_trace(out: Path, rows: list[tuple]) -> None:
    (out / "trace.csv").write_text(trace_to_text(rows))
