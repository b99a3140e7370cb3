"""The three learned delay-coordinate maps.

* :class:`DtsModel` advances the newest block by one delay spacing.
* :class:`NodeModel` is a vector field ``g(u_d) - a u_d`` on the whole
  delay vector, trained through a fixed-step RK4 discretization of the
  flow (discretize-then-optimize) and integrated with DOPRI5 at inference.
* :class:`ReconModel` maps a delay vector to the full state.

All networks act in normalized coordinates. Delay blocks share the
statistics of the observed channels, so the rollout shift register can run
in normalized space; conversions happen only at the model boundary.
"""

import hashlib
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels, nn
from .dynsys import IntegratorConfig, integrate_ode
from .embedding import (EmbeddingSpec, Normalization, ObservationSpec, build_embedding,
                        delay_vectors, normalize_fit)
from .errors import EmbeddingError, IntegrationError, ShapeError, TrainingError
from .timeseries import TimeSeries

log = logging.getLogger(__name__)

DIVERGENCE_FACTOR = 1e3
NODE_INTEGRATOR = IntegratorConfig("dopri5_adaptive", rtol=1e-6, atol=1e-8)


def _series_digest(series):
    return hashlib.sha256(series.values.tobytes()).hexdigest()


@dataclass
class DtsModel:
    net: nn.Mlp
    spec: EmbeddingSpec
    obs: ObservationSpec
    norm: Normalization
    meta: dict = field(default_factory=dict)

    kind = "dts"

    @property
    def d_p(self):
        return self.norm.mean.size

    def predict(self, u_d):
        """Next partial observation (raw units) from raw delay vectors."""
        z = self.norm.tile(self.spec.m).apply(u_d)
        return self.norm.invert(nn.mlp_forward(self.net, z))

    def forecast(self, u_d0, n_steps):
        """Batch rollout; see :func:`dts_rollout_batch`."""
        return dts_rollout_batch(self, u_d0, n_steps)


@dataclass
class NodeModel:
    net: nn.Mlp
    damping: float
    spec: EmbeddingSpec
    train_dt: float
    n_multistep: int
    norm: Normalization
    meta: dict = field(default_factory=dict)
    integrator: IntegratorConfig = NODE_INTEGRATOR
    obs: ObservationSpec = None

    kind = "node"

    def __post_init__(self):
        if self.obs is None:
            self.obs = ObservationSpec(tuple(range(self.norm.mean.size)))

    @property
    def d_p(self):
        return self.norm.mean.size

    @property
    def full_norm(self):
        return self.norm.tile(self.spec.m)

    def vector_field(self, z):
        """Vector field in normalized coordinates."""
        return nn.mlp_forward(self.net, z) - self.damping * z

    def forecast(self, u_d0, n_steps):
        """Newest-block predictions at delay spacing for a batch of delay vectors."""
        tau = self.spec.tau
        try:
            traj = node_integrate_batch(self, u_d0, n_steps * tau, tau)
            return traj[:, :, :self.d_p], np.full(traj.shape[0], n_steps + 1, dtype=np.int64)
        except IntegrationError:
            pass
        # a member left the training range: redo one at a time so the others survive
        u_d0 = np.atleast_2d(np.asarray(u_d0, dtype=np.float64))
        out = np.full((u_d0.shape[0], n_steps + 1, self.d_p), np.nan)
        valid = np.zeros(u_d0.shape[0], dtype=np.int64)
        for i, u in enumerate(u_d0):
            ser, _ = node_integrate(self, u, n_steps * tau, tau)
            k = min(ser.n_samples, n_steps + 1)
            out[i, :k] = ser.values[:k, :self.d_p]
            valid[i] = k
        return out, valid


@dataclass
class ReconModel:
    net: nn.Mlp
    spec: EmbeddingSpec
    obs: ObservationSpec
    in_norm: Normalization
    out_norm: Normalization
    meta: dict = field(default_factory=dict)

    kind = "recon"


def _arch(n_in, hidden, n_out):
    return [n_in] + list(hidden) + [n_out]


# --------------------------------------------------------------------------
# discrete time stepper

def dts_train(data, spec, config, hidden=(200, 200), obs=None, train_fraction=0.8,
              return_trainer=False):
    """Fit the one-delay-step map on partial data.

    The series is split chronologically; statistics and training pairs come
    from the first ``train_fraction`` only. ``meta`` receives raw-unit
    train/test MSE.
    """
    train, test = data.split(train_fraction)
    d_p = data.n_channels
    norm = normalize_fit(train) if config.normalize else Normalization.identity(d_p)
    ds_train = build_embedding(train, spec)
    ds_test = build_embedding(test, spec)
    in_norm = norm.tile(spec.m)
    x, y = in_norm.apply(ds_train.inputs), norm.apply(ds_train.targets)
    xt, yt = in_norm.apply(ds_test.inputs), norm.apply(ds_test.targets)
    net = nn.mlp_init(_arch(spec.m * d_p, hidden, d_p), seed=config.seed)
    trainer = nn.SupervisedTrainer(net, config, x, y, xt, yt)
    if config.epochs:
        trainer.run()
    model = DtsModel(net, spec, obs or ObservationSpec(tuple(range(d_p))), norm)
    model.meta.update(
        train_mse=_raw_mse(model.predict, ds_train.inputs, ds_train.targets),
        test_mse=_raw_mse(model.predict, ds_test.inputs, ds_test.targets),
        history=trainer.history, train_config=config.to_dict(), data_sha256=_series_digest(data))
    return (model, trainer) if return_trainer else model


def _raw_mse(fn, x, y, chunk=8192):
    total = 0.0
    for s in range(0, x.shape[0], chunk):
        d = fn(x[s:s + chunk]) - y[s:s + chunk]
        total += float(np.sum(d * d))
    return total / (x.shape[0] * y.shape[1])


def dts_rollout_batch(model, u_d0, n_steps):
    """Iterate the stepper from each row of ``u_d0`` (raw units).

    Returns ``(outputs[B, n_steps + 1, d_p], n_valid[B])``; row 0 is the
    initial newest block and a member stops once an output exceeds
    ``10^3`` training standard deviations from the training mean.
    """
    u_d0 = np.atleast_2d(np.asarray(u_d0, dtype=np.float64))
    if u_d0.shape[1] != model.spec.m * model.d_p:
        raise ShapeError("initial delay vector has the wrong width")
    z0 = model.norm.tile(model.spec.m).apply(u_d0)
    out, valid = kernels.mlp_rollout(model.net.weights, model.net.biases,
                                     model.net.activations, z0, model.d_p, n_steps,
                                     DIVERGENCE_FACTOR)
    return model.norm.invert(out), valid


def dts_rollout(model, u_d0, n_steps):
    """Single rollout as a TimeSeries with ``dt = tau``.

    Returns ``(series, divergent)``; a divergent run is truncated at its
    last prediction inside the sentinel.
    """
    out, valid = dts_rollout_batch(model, u_d0, n_steps)
    n = int(valid[0])
    return TimeSeries(out[0, :n], model.spec.tau), n < n_steps + 1


# --------------------------------------------------------------------------
# neural ODE

def _node_dataset(series, spec, n_multistep, norm):
    ds = build_embedding(series, spec, target_mode="embedded_sequence", n_sequence=n_multistep)
    full = norm.tile(spec.m)
    x = full.apply(ds.inputs)
    width = spec.m * series.n_channels
    y = full.apply(ds.targets.reshape(-1, n_multistep, width))
    return x, y


def node_multistep_loss(net, damping, h, z0, targets, need_grad=True, substeps=1):
    """Multi-step loss and its exact parameter gradient through RK4.

    ``targets[B, N, D]`` are the delay vectors after ``1..N`` steps of size
    ``h``; each of those is covered by ``substeps`` RK4 steps. The loss sums
    over steps the mean (over rows and components) of the squared error.
    Returns ``(loss, grads, trajectory)``.
    """
    B, N, D = targets.shape
    hs = h / substeps
    z = z0
    tape = []
    traj = []
    for i in range(N * substeps):
        evals = []
        stage_in = z
        ks = []
        for c in (0.5, 0.5, 1.0, None):
            out, cache = nn.mlp_forward_cache(net, stage_in)
            k = out - damping * stage_in
            evals.append(cache)
            ks.append(k)
            if c is not None:
                stage_in = z + c * hs * k
        z = z + (hs / 6.0) * (ks[0] + 2 * ks[1] + 2 * ks[2] + ks[3])
        tape.append(evals)
        if (i + 1) % substeps == 0:
            traj.append(z)
    traj = np.stack(traj, axis=1)
    diff = traj - targets
    loss = float(np.sum(diff * diff)) / (B * D)
    if not need_grad:
        return loss, None, traj
    scale = 2.0 / (B * D)
    grads = [np.zeros_like(p) for p in net.params]

    def field_backward(cache, g):
        pg, gin = nn.mlp_backward(net, cache, g)
        for acc, v in zip(grads, pg):
            acc += v
        return gin - damping * g

    gz = np.zeros_like(z0)
    for i in range(N * substeps - 1, -1, -1):
        if (i + 1) % substeps == 0:
            gz = gz + scale * diff[:, (i + 1) // substeps - 1]
        evals = tape[i]
        gk4 = (hs / 6.0) * gz
        gk3 = (hs / 3.0) * gz
        gk2 = (hs / 3.0) * gz
        gk1 = (hs / 6.0) * gz
        gin = field_backward(evals[3], gk4)
        gz = gz + gin
        gk3 = gk3 + hs * gin
        gin = field_backward(evals[2], gk3)
        gz = gz + gin
        gk2 = gk2 + 0.5 * hs * gin
        gin = field_backward(evals[1], gk2)
        gz = gz + gin
        gk1 = gk1 + 0.5 * hs * gin
        gz = gz + field_backward(evals[0], gk1)
    return loss, grads, traj


def node_train(data, spec, n_multistep=2, damping=1e-3, config=nn.TrainConfig(batch_size=100),
               hidden=(200, 200, 200), obs=None, train_fraction=0.8, max_skip_fraction=0.01,
               substeps=1):
    """Fit the damped neural ODE with the multi-step loss.

    One epoch is one Adam update on a minibatch of ``config.batch_size``
    initial delay vectors drawn at random from the training split.
    Batches whose RK4 rollout leaves ``10^3`` standard deviations are
    skipped; more than ``max_skip_fraction`` skipped batches is an error.

    ``substeps > 1`` splits each data step into that many RK4 steps. With a
    single coarse step the network can learn to cancel the RK4 truncation
    error, which then shows up as bias once the flow is integrated
    accurately at inference.
    """
    train, test = data.split(train_fraction)
    d_p = data.n_channels
    norm = normalize_fit(train) if config.normalize else Normalization.identity(d_p)
    x, y = _node_dataset(train, spec, n_multistep, norm)
    width = spec.m * d_p
    net = nn.mlp_init(_arch(width, hidden, width), seed=config.seed)
    adam = nn.AdamState.zeros_like(net.params)
    rng = np.random.default_rng([int(config.seed), 1])
    h = data.dt
    history = nn.TrainHistory()
    skipped = 0
    for epoch in range(config.epochs):
        idx = rng.integers(0, x.shape[0], size=min(config.batch_size, x.shape[0]))
        loss, grads, traj = node_multistep_loss(net, damping, h, x[idx], y[idx],
                                                substeps=substeps)
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite NODE loss at epoch {epoch}", epoch=epoch, batch=0)
        if np.max(np.abs(traj)) > DIVERGENCE_FACTOR:
            skipped += 1
            log.warning("skipping divergent NODE batch at epoch %d", epoch)
            if skipped > max_skip_fraction * config.epochs:
                raise TrainingError("too many divergent NODE batches", epoch=epoch, batch=0)
            continue
        lr = config.lr_at(epoch)
        nn.adam_step(net.params, grads, adam, lr)
        history.append(epoch + 1, lr, loss, None)
    model = NodeModel(net, float(damping), spec, float(h), int(n_multistep), norm, obs=obs)
    xt, yt = _node_dataset(test, spec, n_multistep, norm)
    model.meta.update(
        history=history, skipped_batches=skipped, train_config=config.to_dict(),
        test_multistep_loss=node_multistep_loss(net, damping, h, xt, yt, need_grad=False,
                                                substeps=substeps)[0],
        rk4_substeps=int(substeps),
        data_sha256=_series_digest(data))
    return model


def node_integrate_batch(model, u_d0, t_end, sample_dt, config=None):
    """Integrate a batch of raw delay vectors; returns ``[B, n_t, m*d_p]`` raw.

    The whole batch is advanced as one ODE system with a shared step size.
    """
    config = config or model.integrator
    u_d0 = np.atleast_2d(np.asarray(u_d0, dtype=np.float64))
    full = model.full_norm
    if u_d0.shape[1] != full.mean.size:
        raise ShapeError("initial delay vector has the wrong width")
    z0 = full.apply(u_d0)
    ts = integrate_ode(lambda t, z: model.vector_field(z), z0, (0.0, t_end), config, sample_dt,
                       stop_norm=DIVERGENCE_FACTOR)
    z = ts.values.reshape(ts.n_samples, *z0.shape).transpose(1, 0, 2)
    return full.invert(z)


def node_integrate(model, u_d0, t_end, sample_dt, config=None):
    """Single NODE trajectory as an embedding-valued TimeSeries.

    On integrator failure the series is truncated at the failure time and
    ``divergent`` is True. Returns ``(series, divergent)``.
    """
    if not t_end > 0:
        raise ValueError("t_end must be positive")
    try:
        z = node_integrate_batch(model, u_d0, t_end, sample_dt, config)[0]
        return TimeSeries(z, sample_dt), False
    except IntegrationError as exc:
        if exc.partial is None:
            raise
        z0 = exc.partial.values
        z = model.full_norm.invert(z0.reshape(z0.shape[0], -1))
        return TimeSeries(z, sample_dt), True


def node_loss_prime(model, test, chunk=2000):
    """One-delay MSE of the leading block (raw units), comparable to the DTS loss."""
    spec = model.spec
    ds = build_embedding(test, spec)
    total = 0.0
    for s in range(0, ds.n_pairs, chunk):
        traj = node_integrate_batch(model, ds.inputs[s:s + chunk], spec.tau, spec.tau)
        d = traj[:, -1, :model.d_p] - ds.targets[s:s + chunk]
        total += float(np.sum(d * d))
    return total / (ds.n_pairs * model.d_p)


# --------------------------------------------------------------------------
# reconstruction

def recon_train(partial, full, spec, config, hidden=(200, 200), obs=None, train_fraction=0.8):
    """Supervised map from delay vectors of ``partial`` to the aligned ``full`` state."""
    if partial.dt != full.dt or partial.t0 != full.t0 or partial.n_samples != full.n_samples:
        raise EmbeddingError("partial and full series are not time-aligned")
    p_train, p_test = partial.split(train_fraction)
    f_train, f_test = full.split(train_fraction)
    d_p, d_o = partial.n_channels, full.n_channels
    if config.normalize:
        in_norm, out_norm = normalize_fit(p_train), normalize_fit(f_train)
    else:
        in_norm, out_norm = Normalization.identity(d_p), Normalization.identity(d_o)
    ds_train = build_embedding(p_train, spec, target_mode="full_state", aux=f_train)
    ds_test = build_embedding(p_test, spec, target_mode="full_state", aux=f_test)
    tiled = in_norm.tile(spec.m)
    x, y = tiled.apply(ds_train.inputs), out_norm.apply(ds_train.targets)
    xt, yt = tiled.apply(ds_test.inputs), out_norm.apply(ds_test.targets)
    net = nn.mlp_init(_arch(spec.m * d_p, hidden, d_o), seed=config.seed)
    trainer = nn.SupervisedTrainer(net, config, x, y, xt, yt)
    if config.epochs:
        trainer.run()
    model = ReconModel(net, spec, obs or ObservationSpec(tuple(range(d_p))), in_norm, out_norm)
    apply = lambda u: recon_apply_array(model, u)  # noqa: E731
    model.meta.update(
        train_mse=_raw_mse(apply, ds_train.inputs, ds_train.targets),
        test_mse=_raw_mse(apply, ds_test.inputs, ds_test.targets),
        test_mse_normalized=trainer.history.test_mse[-1] if len(trainer.history) else None,
        history=trainer.history, train_config=config.to_dict(),
        provenance={"source": "ground_truth", "partial_sha256": _series_digest(partial),
                    "full_sha256": _series_digest(full)})
    return model


def recon_apply_array(model, u_d):
    u_d = np.asarray(u_d, dtype=np.float64)
    if u_d.shape[-1] != model.net.n_in:
        raise ShapeError(f"delay vector width {u_d.shape[-1]} != {model.net.n_in}")
    z = model.in_norm.tile(model.spec.m).apply(u_d)
    return model.out_norm.invert(nn.mlp_forward(model.net, z))


def recon_apply(model, embedded):
    """Full-state estimate for delay vectors (array, or embedding-valued TimeSeries)."""
    if isinstance(embedded, TimeSeries):
        return TimeSeries(recon_apply_array(model, embedded.values), embedded.dt, embedded.t0)
    return recon_apply_array(model, embedded)


def embed_rollout(partial_values, m, d_p=None):
    """Delay vectors of a rollout sampled at the delay spacing itself.

    Row ``k`` is ``[u(k), u(k-1), ..., u(k-m+1)]``; the first ``m - 1``
    samples are consumed as history.
    """
    v = np.asarray(partial_values, dtype=np.float64)
    v = v.reshape(v.shape[0], -1)
    anchors = np.arange(m - 1, v.shape[0])
    return delay_vectors(v, m, 1, anchors)


def initial_delay_vectors(series, spec, anchors):
    """Raw delay vectors of ``series`` at the given sample indices."""
    anchors = np.asarray(anchors, dtype=np.int64)
    if anchors.min() < spec.window:
        raise EmbeddingError("anchor has no complete delay history")
    return delay_vectors(series.values, spec.m, spec.n_stride, anchors)


# --------------------------------------------------------------------------
# persistence

def _norm_dict(n):
    return None if n is None else n.to_dict()


def save_model(model, path):
    """Write a model with its ``model_kind`` tag through the nn file format."""
    meta = {"model_kind": model.kind, "spec": model.spec.to_dict()}
    extra = {k: v for k, v in model.meta.items() if k not in ("history",)}
    if "history" in model.meta:
        h = model.meta["history"]
        extra["final_train_loss"] = h.train_mse[-1] if len(h) else None
    meta["provenance"] = _jsonable(extra)
    if model.kind == "dts":
        meta.update(obs=list(model.obs.channel_indices), norm=model.norm.to_dict())
    elif model.kind == "node":
        meta.update(damping=model.damping, n_multistep=model.n_multistep,
                    train_dt=model.train_dt, norm=model.norm.to_dict(),
                    obs=list(model.obs.channel_indices),
                    integrator=dict(model.integrator.__dict__))
    else:
        meta.update(obs=list(model.obs.channel_indices), in_norm=model.in_norm.to_dict(),
                    out_norm=model.out_norm.to_dict())
    return nn.mlp_save(path, model.net, meta)


def load_model(path):
    net, meta = nn.mlp_load(path)
    kind = meta.get("model_kind")
    spec = EmbeddingSpec.from_dict(meta["spec"])
    prov = meta.get("provenance", {})
    if kind == "dts":
        return DtsModel(net, spec, ObservationSpec(tuple(meta["obs"])),
                        Normalization.from_dict(meta["norm"]), prov)
    if kind == "node":
        integ = meta.get("integrator")
        cfg = IntegratorConfig(**integ) if integ else NODE_INTEGRATOR
        return NodeModel(net, meta["damping"], spec, meta["train_dt"], meta["n_multistep"],
                         Normalization.from_dict(meta["norm"]), prov, cfg,
                         ObservationSpec(tuple(meta["obs"])) if "obs" in meta else None)
    if kind == "recon":
        return ReconModel(net, spec, ObservationSpec(tuple(meta["obs"])),
                          Normalization.from_dict(meta["in_norm"]),
                          Normalization.from_dict(meta["out_norm"]), prov)
    raise ValueError(f"unknown model_kind {kind!r}")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj
