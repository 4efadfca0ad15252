"""Experiment runner: seeded training loops, timing, and result emission.

Each seed spawns three independent RNG streams (init, shuffle, policy), so a
(config, seed) pair pins down every weight draw, batch order and layer
selection.  The backward wall clock is measured around the backward call
alone; batch loading, forward passes and evaluation are deliberately outside
the timed region and only show up in the run's total time.  Seeds always run
sequentially so timings never fight each other for cores.
"""

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from lwsgd import analysis, data, model, optim, policy, tensor
from lwsgd.errors import RunAborted


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    train_acc: float
    test_acc: float
    selection: tuple
    backward_time_s: float
    cumulative_backward_time_s: float


@dataclass
class RunRecord:
    seed: int
    initial_test_acc: float
    epochs: list = field(default_factory=list)
    final_test_acc: float = None
    total_backward_time_s: float = 0.0
    total_time_s: float = 0.0
    final_theta: np.ndarray = None
    extras: dict = field(default_factory=dict)


def _rng_streams(seed):
    init_ss, shuffle_ss, policy_ss = np.random.SeedSequence(seed).spawn(3)
    init_rng = np.random.Generator(np.random.PCG64(init_ss))
    policy_rng = np.random.Generator(np.random.PCG64(policy_ss))
    shuffle_seed = int(shuffle_ss.generate_state(1, dtype=np.uint64)[0] & 0x7FFFFFFF)
    return init_rng, policy_rng, shuffle_seed


def load_datasets(cfg):
    """Load (train, test) datasets per the config, applying the subset."""
    if cfg.data_kind in ("mnist", "fashion_mnist"):
        train = data.load_idx(cfg.train_images, cfg.train_labels, name=cfg.data_kind)
        test = data.load_idx(cfg.test_images, cfg.test_labels, name=cfg.data_kind)
    else:
        train = data.load_cifar10(cfg.train_batches)
        test = data.load_cifar10(cfg.test_batches)
    if cfg.subset:
        # The subset draw is keyed by the config alone, not the run seeds:
        # every seed trains on the same balanced sample.
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.subset)))
        train = data.balanced_subset(train, cfg.subset, rng)
    return train, test


def _init_params(cfg, network, init_rng):
    params = model.xavier_init(network, init_rng, dtype=cfg.np_dtype())
    if cfg.init_kind == "checkpoint":
        data.load_checkpoint_into(params, cfg.init_checkpoint, as_initial=True)
    return params


def _make_optimizer(cfg, params):
    if cfg.optim_kind == "adam":
        return optim.AdamState(params, lr=cfg.lr, beta1=cfg.beta1,
                               beta2=cfg.beta2, eps=cfg.eps)
    return optim.NesterovState(params, momentum=cfg.momentum,
                               weight_decay=cfg.weight_decay)


def full_batch_gradient(network, params, dataset, batch_size=512):
    """Exact mean gradient over a whole dataset as a flat float64 vector."""
    total = np.zeros(network.p, dtype=np.float64)
    n = dataset.n
    for lo in range(0, n, batch_size):
        hi = min(n, lo + batch_size)
        tape = model.ActivationTape()
        logits = model.forward(network, params, dataset.images[lo:hi], tape)
        _, grad_logits = model.softmax_cross_entropy(logits, dataset.labels[lo:hi])
        grads = model.backward(network, params, tape, grad_logits, stop_layer=1)
        total += model.flat_gradient(network, grads) * (hi - lo)
    return total / n


def minibatch_gradient(network, params, images, labels):
    """Flat stochastic gradient of one mini-batch (does not disturb training)."""
    tape = model.ActivationTape()
    logits = model.forward(network, params, images, tape)
    _, grad_logits = model.softmax_cross_entropy(logits, labels)
    grads = model.backward(network, params, tape, grad_logits, stop_layer=1)
    return model.flat_gradient(network, grads)


def train_single_seed(cfg, seed, train, test, collect_freq=False,
                      collect_profiles=False):
    """One full training run.  Returns a RunRecord (theta included)."""
    network = cfg.build_network()
    pol = cfg.build_policy(network)
    schedule = cfg.build_schedule()
    init_rng, policy_rng, shuffle_seed = _rng_streams(seed)
    params = _init_params(cfg, network, init_rng)
    opt = _make_optimizer(cfg, params)

    t_start = time.perf_counter()
    _, initial_acc = model.evaluate(network, params, test.images, test.labels,
                                    cfg.eval_batch_size)
    record = RunRecord(seed=seed, initial_test_acc=initial_acc)
    record.extras["theta0"] = params.theta0.copy()

    freq_maps = None
    if collect_freq and cfg.alpha_list:
        freq_maps = {a: analysis.ActiveFrequencyMap(alpha=a, p=network.p)
                     for a in cfg.alpha_list}
    profiles = [] if collect_profiles else None

    cum_backward = 0.0
    for epoch in range(cfg.epochs):
        lr = optim.lr_at(schedule, epoch)
        if cfg.optim_kind == "adam":
            opt.lr = lr  # constant unless the config opts into a schedule
        selection = policy.draw_selection(pol, policy_rng, epoch)
        stop = policy.truncation_of(selection)
        layer_set = selection.selected

        if profiles is not None and epoch in cfg.profile_epochs:
            xb, yb = next(data.minibatches(train, cfg.batch_size, shuffle_seed, epoch))
            grad = minibatch_gradient(network, params, xb, yb)
            profiles.append(analysis.gradient_profile(grad, epoch=epoch))

        epoch_backward = 0.0
        loss_sum = 0.0
        correct = 0
        for xb, yb in data.minibatches(train, cfg.batch_size, shuffle_seed, epoch):
            tape = model.ActivationTape()
            logits = model.forward(network, params, xb, tape)
            loss, grad_logits = model.softmax_cross_entropy(logits, yb)
            t0 = time.perf_counter()
            grads = model.backward(network, params, tape, grad_logits,
                                   stop_layer=stop, layer_set=layer_set)
            epoch_backward += time.perf_counter() - t0
            if cfg.optim_kind == "adam":
                optim.adam_step(opt, params, grads)
            else:
                optim.nesterov_sgd_step(opt, params, grads, lr)
            loss_sum += loss * len(yb)
            correct += int((logits.argmax(axis=1) == yb).sum())

        train_loss = loss_sum / train.n
        if not np.isfinite(train_loss):
            raise RunAborted(epoch)
        train_acc = correct / train.n
        _, test_acc = model.evaluate(network, params, test.images, test.labels,
                                     cfg.eval_batch_size)
        if freq_maps is not None:
            grad = full_batch_gradient(network, params, train, cfg.eval_batch_size)
            for fm in freq_maps.values():
                fm.add_epoch(grad)
        cum_backward += epoch_backward
        record.epochs.append(EpochRecord(
            epoch=epoch, train_loss=train_loss, train_acc=train_acc,
            test_acc=test_acc, selection=selection.as_sorted(),
            backward_time_s=epoch_backward,
            cumulative_backward_time_s=cum_backward,
        ))

    record.final_test_acc = (record.epochs[-1].test_acc if record.epochs
                             else initial_acc)
    record.total_backward_time_s = cum_backward
    record.total_time_s = time.perf_counter() - t_start
    record.final_theta = params.theta.copy()
    if freq_maps is not None:
        record.extras["freq_maps"] = freq_maps
        record.extras["network"] = network
    if profiles is not None:
        record.extras["profiles"] = profiles
    return record


def _stderr(values):
    if len(values) < 2:
        return None
    return float(np.std(values, ddof=1) / np.sqrt(len(values)))


def _csv_float(x):
    return repr(float(x))


def emit_results(cfg, records, out_dir):
    """Write epochs_seed<k>.csv per seed plus summary.json; overwrites in place."""
    os.makedirs(out_dir, exist_ok=True)
    for rec in records:
        path = os.path.join(out_dir, f"epochs_seed{rec.seed}.csv")
        with open(path, "w") as fh:
            fh.write("epoch,train_loss,train_acc,test_acc,selection,"
                     "backward_time_s,cumulative_backward_time_s\n")
            for er in rec.epochs:
                sel = "|".join(str(i) for i in er.selection)
                fh.write(",".join([
                    str(er.epoch), _csv_float(er.train_loss),
                    _csv_float(er.train_acc), _csv_float(er.test_acc), sel,
                    _csv_float(er.backward_time_s),
                    _csv_float(er.cumulative_backward_time_s),
                ]) + "\n")
    finals = [rec.final_test_acc for rec in records]
    summary = {
        "config": cfg.raw,
        "backend": tensor.backend_name(),
        "seeds": [rec.seed for rec in records],
        "per_seed": [
            {
                "seed": rec.seed,
                "initial_test_acc": rec.initial_test_acc,
                "final_test_acc": rec.final_test_acc,
                "total_backward_time_s": rec.total_backward_time_s,
                "total_time_s": rec.total_time_s,
            }
            for rec in records
        ],
        "test_acc_mean": float(np.mean(finals)),
        "test_acc_stderr": _stderr(finals),
        "total_backward_time_s": float(sum(rec.total_backward_time_s
                                           for rec in records)),
    }
    with open(os.path.join(out_dir, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    return summary


def run_experiment(cfg, out_dir=None, save_checkpoints=True):
    """Train every seed sequentially; optionally persist results and weights."""
    train, test = load_datasets(cfg)
    records = []
    for seed in cfg.seeds:
        rec = train_single_seed(cfg, seed, train, test,
                                collect_profiles=bool(cfg.profile_epochs))
        records.append(rec)
        if out_dir and save_checkpoints:
            os.makedirs(out_dir, exist_ok=True)
            network = cfg.build_network()
            params = model.ParamStore(network, rec.final_theta.copy())
            data.save_checkpoint(
                params, os.path.join(out_dir, f"final_seed{seed}.ckpt"),
                seed=seed, epoch=cfg.epochs,
            )
        if out_dir and rec.extras.get("profiles"):
            pdir = os.path.join(out_dir, f"seed{seed}")
            os.makedirs(pdir, exist_ok=True)
            for prof in rec.extras["profiles"]:
                ppath = os.path.join(pdir, f"grad_profile_epoch{prof.epoch}.csv")
                with open(ppath, "w") as fh:
                    fh.write("rank,magnitude\n")
                    for rank, mag in enumerate(prof.magnitudes):
                        fh.write(f"{rank},{_csv_float(mag)}\n")
    if out_dir:
        emit_results(cfg, records, out_dir)
    return records


def run_reinit_experiment(cfg, out_dir=None):
    """Train, then sweep both re-init operators over the config grid.

    Emits reinit_sweep.csv rows (mode, percent, seed, test_accuracy).
    """
    if not cfg.reinit_grid:
        raise ValueError("config has an empty analysis.reinit_grid")
    train, test = load_datasets(cfg)
    network = cfg.build_network()
    rows = []
    records = []
    for seed in cfg.seeds:
        rec = train_single_seed(cfg, seed, train, test)
        records.append(rec)
        for mode, pct, acc in analysis.reinit_sweep(
                network, rec.final_theta, rec.extras["theta0"],
                cfg.reinit_grid, test.images, test.labels,
                cfg.eval_batch_size):
            rows.append((mode, pct, seed, acc))
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "reinit_sweep.csv"), "w") as fh:
            fh.write("mode,percent,seed,test_accuracy\n")
            for mode, pct, seed, acc in rows:
                fh.write(f"{mode},{_csv_float(pct)},{seed},{_csv_float(acc)}\n")
        emit_results(cfg, records, out_dir)
    return rows


def run_frequency_experiment(cfg, out_dir=None):
    """Train with per-epoch full-batch gradient tracking; emit layer heatmaps."""
    if not cfg.alpha_list:
        raise ValueError("config has an empty analysis.alpha_list")
    train, test = load_datasets(cfg)
    records = []
    for seed in cfg.seeds:
        rec = train_single_seed(cfg, seed, train, test, collect_freq=True)
        records.append(rec)
        if out_dir:
            network = rec.extras["network"]
            for alpha, fm in rec.extras["freq_maps"].items():
                adir = os.path.join(out_dir, f"seed{seed}",
                                    f"alpha_{alpha:g}")
                os.makedirs(adir, exist_ok=True)
                maps = analysis.layer_heatmap(fm, network)
                for index, hm in maps.items():
                    np.savetxt(os.path.join(adir, f"active_freq_layer{index}.csv"),
                               np.atleast_2d(hm.grid), delimiter=",")
                    np.savetxt(os.path.join(adir, f"active_freq_layer{index}_bias.csv"),
                               np.atleast_2d(hm.bias).T, delimiter=",")
    if out_dir:
        emit_results(cfg, records, out_dir)
    return records


def run_backward_bench(cfg, out_dir=None):
    """Time the config's policy against a full-training twin, same seeds.

    Returns a dict with both cumulative backward times and their ratio.
    """
    records = run_experiment(cfg, out_dir=None, save_checkpoints=False)
    full_raw = dict(cfg.raw)
    full_raw["policy.kind"] = "full"
    from lwsgd.config import build_config
    full_cfg = build_config(full_raw)
    full_records = run_experiment(full_cfg, out_dir=None, save_checkpoints=False)
    policy_t = float(sum(r.total_backward_time_s for r in records))
    full_t = float(sum(r.total_backward_time_s for r in full_records))
    result = {
        "policy_kind": cfg.policy_kind,
        "seeds": cfg.seeds,
        "epochs": cfg.epochs,
        "policy_backward_time_s": policy_t,
        "full_backward_time_s": full_t,
        "time_ratio_vs_full": policy_t / full_t if full_t > 0 else None,
        "policy_test_acc_mean": float(np.mean([r.final_test_acc for r in records])),
        "full_test_acc_mean": float(np.mean([r.final_test_acc for r in full_records])),
    }
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "bench_backward.json"), "w") as fh:
            json.dump(result, fh, indent=2)
            fh.write("\n")
    return result
