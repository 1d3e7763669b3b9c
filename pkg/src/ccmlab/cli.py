"""Batch front-end: dataset generation, training, evaluation, experiments.

Subcommands: gen-dataset, train, eval, run. Configuration is a single JSON
document; command-line flags override config fields, which override the
built-in defaults. Every command honors --seed (never the wall clock) and
writes CSV/JSON artifacts plus a config echo into the output directory.
Exit codes: 0 success, 2 configuration error, 1 runtime error.
"""

import argparse
import copy
import csv
import json
import os
import sys

import numpy as np

from .denoise import estimate_error_stats, load_error_stats, save_error_stats
from .dataset import (
    gen_cov_dataset,
    gen_locator_dataset,
    load_cov_dataset,
    load_locator_dataset,
    sample_positions,
    save_cov_dataset,
    save_locator_dataset,
    uniform_grid,
)
from .estimator import nmse_r, rmse_l
from .geometry import ArrayConfig
from .nn import (
    TrainConfig,
    build_lcnet,
    build_lenet,
    init_params,
    lcnet_predict,
    lenet_predict,
    load_checkpoint,
    load_trainer_state,
    save_checkpoint,
    save_trainer_state,
    train,
)
from .scene import channel_map_batch, default_scene, load_scene, save_scene
from .seeding import substream
from .sim import METHODS, run_experiment
from .timing import FrameTiming
from .covariance import RegionSpec, discrete_ccm, unpack_cov


class ConfigError(Exception):
    pass


DEFAULT_CONFIG = {
    "seed": 1234,
    "out_dir": "runs/default",
    "scene": None,  # path to a scene JSON; None uses the built-in scene
    "array": {"n_ele": 3, "n_az": 4, "spacing_ratio": 0.5},
    "timing": {"t_o": 0.005, "t_c": 0.005, "n_cct": 50},
    "speed_range": [2.0, 10.0],
    "noise": {
        "sigma_c": [2.0],
        "sigma_v": 0.0,
        "snr_db": [0.0, 5.0, 10.0, 15.0, 20.0],
        "locator_noise_ratio": 0.01,
    },
    "dataset": {
        "grid_side": 250,
        "train_locations": 5000,
        "train_speeds_per_location": 4,
        "test_locations": 150,
        "test_speeds_per_location": 2,
        "locator_train_samples": 6000,
        "stats_samples": 2000,
        "stats_draws": 20,
    },
    "training": {
        "lcnet": {"learning_rate": 1e-3, "batch_size": 128, "epochs": 100},
        # few epochs on purpose: a lightly fit locator stays smooth, so its
        # offline error statistics keep describing it on degraded feedback
        # channels and the fusion never overtrusts it
        "lenet": {"learning_rate": 1e-3, "batch_size": 128, "epochs": 6},
    },
    "experiment": {
        "n_trajectories": 20,
        "n_coct": 10,
        "mode": "constant",
        "m_p": 60,
        "methods": list(METHODS),
    },
    "eval": {
        "fractions": [0.25, 0.5, 1.0],
        "seeds": [0, 1, 2],
        "sweep_epochs": {"lcnet": 30, "lenet": 6},
    },
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, val in override.items():
        if key not in out:
            raise ConfigError("unknown config field %r" % key)
        if isinstance(out[key], dict):
            if not isinstance(val, dict):
                raise ConfigError("config field %r must be an object" % key)
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path=None, overrides=None):
    """Defaults <- config file <- flag overrides, validated."""
    config = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                config = _merge(config, json.load(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("cannot load config %s: %s" % (path, exc))
    for key, val in (overrides or {}).items():
        if val is None:
            continue
        node = config
        parts = key.split(".")
        for part in parts[:-1]:
            node = node[part]
        node[parts[-1]] = val
    if config["seed"] is None:
        raise ConfigError("seed must be an integer")
    return config


def _scene_from(config):
    if config["scene"] is None:
        return default_scene()
    if not os.path.exists(config["scene"]):
        raise ConfigError("scene file %s does not exist" % config["scene"])
    return load_scene(config["scene"])


def _array_from(config):
    a = config["array"]
    return ArrayConfig(a["n_ele"], a["n_az"], a["spacing_ratio"])


def _timing_from(config):
    t = config["timing"]
    return FrameTiming(t_o=t["t_o"], t_c=t["t_c"], n_cct=t["n_cct"])


def _echo_config(config, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config_echo.json"), "w", encoding="utf-8") as fh:
        json.dump(config, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _paths(out_dir):
    return {
        "grid": os.path.join(out_dir, "grid_channels.npy"),
        "cov_train": os.path.join(out_dir, "cov_train.csv"),
        "cov_test": os.path.join(out_dir, "cov_test.csv"),
        "loc_train": os.path.join(out_dir, "locator_train.csv"),
        "lcnet": os.path.join(out_dir, "lcnet.ckpt"),
        "lenet": os.path.join(out_dir, "lenet.ckpt"),
        "stats": os.path.join(out_dir, "error_stats.json"),
        "scene": os.path.join(out_dir, "scene.json"),
    }


def _grid_and_channels(config, cfg, scene, out_dir, write=False):
    grid = uniform_grid(scene.plane_bounds, config["dataset"]["grid_side"])
    path = _paths(out_dir)["grid"]
    if os.path.exists(path):
        channels = np.load(path)
        if channels.shape == (len(grid), cfg.n_total):
            return grid, channels
    channels = channel_map_batch(cfg, scene, grid)
    if write:
        np.save(path, channels)
    return grid, channels


def cmd_gen_dataset(config):
    out_dir = config["out_dir"]
    _echo_config(config, out_dir)
    cfg = _array_from(config)
    scene = _scene_from(config)
    timing = _timing_from(config)
    paths = _paths(out_dir)
    save_scene(scene, paths["scene"])
    grid, channels = _grid_and_channels(config, cfg, scene, out_dir, write=True)
    ds = config["dataset"]
    seed = config["seed"]

    feats, labels, coefficient = gen_cov_dataset(
        cfg, scene, timing, grid, channels,
        locations=ds["train_locations"],
        speeds_per_location=ds["train_speeds_per_location"],
        speed_range=tuple(config["speed_range"]),
        rng=substream(seed, "cov-train"),
    )
    save_cov_dataset(paths["cov_train"], feats, labels, coefficient)

    feats_t, labels_t, coefficient_t = gen_cov_dataset(
        cfg, scene, timing, grid, channels,
        locations=ds["test_locations"],
        speeds_per_location=ds["test_speeds_per_location"],
        speed_range=tuple(config["speed_range"]),
        rng=substream(seed, "cov-test"),
    )
    save_cov_dataset(paths["cov_test"], feats_t, labels_t, coefficient_t)

    lf, ll, zeta, noise_var = gen_locator_dataset(
        cfg, scene,
        count=ds["locator_train_samples"],
        noise_energy_ratio=config["noise"]["locator_noise_ratio"],
        rng=substream(seed, "locator-train"),
    )
    save_locator_dataset(paths["loc_train"], lf, ll, zeta, noise_var)
    print("wrote datasets to %s (coefficient=%r, zeta=%r)" % (out_dir, coefficient, zeta))
    return 0


def _train_config(config, which, seed):
    node = dict(config["training"][which])
    node.setdefault("seed", seed)
    return TrainConfig(**node)


def cmd_train(config, which, resume=False):
    out_dir = config["out_dir"]
    _echo_config(config, out_dir)
    paths = _paths(out_dir)
    seed = config["seed"]
    if which == "lcnet":
        data = paths["cov_train"]
        if not os.path.exists(data):
            raise ConfigError("missing dataset %s; run gen-dataset first" % data)
        feats, labels, _ = load_cov_dataset(data)
        n_b = _array_from(config).n_total
        model = build_lcnet(n_b=n_b)
    else:
        data = paths["loc_train"]
        if not os.path.exists(data):
            raise ConfigError("missing dataset %s; run gen-dataset first" % data)
        feats, labels, _, _ = load_locator_dataset(data)
        model = build_lenet(n_b=_array_from(config).n_total)
    ckpt = paths[which]
    state_path = ckpt + ".trainer"
    state = None
    if resume:
        if not (os.path.exists(ckpt) and os.path.exists(state_path)):
            raise ConfigError("cannot resume: %s or %s missing" % (ckpt, state_path))
        model = load_checkpoint(ckpt)
        state = load_trainer_state(model, state_path)
    else:
        init_params(model, substream(seed, "init-" + which).integers(2**32))
    cfg_train = _train_config(config, which, seed)
    trace, state = train(model, feats, labels, cfg_train, state=state)
    save_checkpoint(model, ckpt)
    save_trainer_state(state, state_path)
    loss_csv = os.path.join(out_dir, "%s_loss.csv" % which)
    mode = "a" if resume and os.path.exists(loss_csv) else "w"
    with open(loss_csv, mode, encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        if mode == "w":
            writer.writerow(["epoch", "loss"])
        start = state.epoch - len(trace)
        for i, loss in enumerate(trace):
            writer.writerow([start + i, repr(loss)])
    print("trained %s for %d epochs (final loss %r) -> %s" % (which, len(trace), trace[-1], ckpt))
    return 0


def _fit_fraction(feats, labels, fraction, seed, cfg_train, builder):
    n = max(1, int(round(len(feats) * fraction)))
    idx = np.random.default_rng([seed, 7001]).permutation(len(feats))[:n]
    model = builder()
    init_params(model, seed)
    cfg = TrainConfig(**{**cfg_train.__dict__, "seed": seed})
    train(model, feats[idx], labels[idx], cfg)
    return model


def cmd_eval(config, sweep=False):
    out_dir = config["out_dir"]
    _echo_config(config, out_dir)
    paths = _paths(out_dir)
    cfg = _array_from(config)
    scene = _scene_from(config)
    timing = _timing_from(config)
    for need in ("cov_train", "cov_test", "loc_train"):
        if not os.path.exists(paths[need]):
            raise ConfigError("missing dataset %s; run gen-dataset first" % paths[need])
    feats_t, labels_t, coefficient_t = load_cov_dataset(paths["cov_test"])
    _, _, coefficient = load_cov_dataset(paths["cov_train"])
    truth = [unpack_cov(row) * coefficient_t for row in labels_t]
    lf, ll, zeta, noise_var = load_locator_dataset(paths["loc_train"])
    rows = []

    def eval_lcnet(model):
        est = [lcnet_predict(model, coefficient, f[:2], f[2]) for f in feats_t]
        return nmse_r(truth, est)

    def eval_lenet(model):
        rng = substream(config["seed"], "eval-locator")
        pos = sample_positions(scene.plane_bounds, 1500, rng)
        ch = channel_map_batch(cfg, scene, pos)
        noisy = ch + np.sqrt(noise_var / 2.0) * (
            rng.standard_normal(ch.shape) + 1j * rng.standard_normal(ch.shape)
        )
        err = lenet_predict(model, zeta, noisy) - pos
        centroid = np.array([
            0.5 * (scene.plane_bounds[0][0] + scene.plane_bounds[0][1]),
            0.5 * (scene.plane_bounds[1][0] + scene.plane_bounds[1][1]),
        ])
        return rmse_l(err), rmse_l(pos - centroid)

    if sweep:
        feats, labels, _ = load_cov_dataset(paths["cov_train"])
        sweep_epochs = config["eval"]["sweep_epochs"]
        for fraction in config["eval"]["fractions"]:
            for seed in config["eval"]["seeds"]:
                cfg_l = _train_config(config, "lcnet", seed)
                cfg_l.epochs = sweep_epochs["lcnet"]
                m = _fit_fraction(feats, labels, fraction, seed, cfg_l,
                                  lambda: build_lcnet(n_b=cfg.n_total))
                nr = eval_lcnet(m)
                cfg_e = _train_config(config, "lenet", seed)
                cfg_e.epochs = sweep_epochs["lenet"]
                l = _fit_fraction(lf, ll, fraction, seed, cfg_e,
                                  lambda: build_lenet(n_b=cfg.n_total))
                rm, base = eval_lenet(l)
                rows.append((fraction, seed, nr, rm, base))
                print("fraction=%.2f seed=%d nmse_r=%.5f rmse_l=%.4f centroid=%.4f"
                      % (fraction, seed, nr, rm, base))
    else:
        for which in ("lcnet", "lenet"):
            if not os.path.exists(paths[which]):
                raise ConfigError("missing checkpoint %s; run train first" % paths[which])
        nr = eval_lcnet(load_checkpoint(paths["lcnet"]))
        rm, base = eval_lenet(load_checkpoint(paths["lenet"]))
        rows.append((1.0, config["seed"], nr, rm, base))
        print("nmse_r=%.5f rmse_l=%.4f centroid_rmse=%.4f" % (nr, rm, base))

    with open(os.path.join(out_dir, "metrics.csv"), "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["fraction", "seed", "nmse_r", "rmse_l", "centroid_rmse_l"])
        for fraction, seed, nr, rm, base in rows:
            writer.writerow([repr(float(fraction)), seed, repr(nr), repr(rm), repr(base)])
    return 0


def cmd_run(config):
    out_dir = config["out_dir"]
    _echo_config(config, out_dir)
    paths = _paths(out_dir)
    cfg = _array_from(config)
    scene = _scene_from(config)
    timing = _timing_from(config)
    exp = config["experiment"]
    methods = tuple(exp["methods"])
    needs_net = set(methods) & {"loc_raw", "loc_denoised", "loc_noiseless"}

    lcnet = coefficient = lenet = zeta = stats = rmse_loc = None
    if needs_net:
        if not (os.path.exists(paths["lcnet"]) and os.path.exists(paths["cov_train"])):
            raise ConfigError("experiment needs a trained lcnet checkpoint and dataset")
        lcnet = load_checkpoint(paths["lcnet"])
        _, _, coefficient = load_cov_dataset(paths["cov_train"])
    else:
        if not os.path.exists(paths["cov_train"]):
            raise ConfigError("experiment needs the covariance dataset for its scale")
        _, _, coefficient = load_cov_dataset(paths["cov_train"])
    if "loc_denoised" in methods:
        if not (os.path.exists(paths["lenet"]) and os.path.exists(paths["loc_train"])):
            raise ConfigError("loc_denoised needs a trained lenet checkpoint and dataset")
        lenet = load_checkpoint(paths["lenet"])
        _, _, zeta, noise_var = load_locator_dataset(paths["loc_train"])
        if os.path.exists(paths["stats"]):
            stats, meta = load_error_stats(paths["stats"])
            rmse_loc = meta.get("rmse_l")
        else:
            ds = config["dataset"]
            rng = substream(config["seed"], "stats-samples")
            pos = sample_positions(scene.plane_bounds, ds["stats_samples"], rng)
            ch = channel_map_batch(cfg, scene, pos)
            stats, rmse_loc = estimate_error_stats(
                lambda h: lenet_predict(lenet, zeta, h),
                list(zip(ch, pos)),
                noise_var,
                draws_per_sample=ds["stats_draws"],
                seed=substream(config["seed"], "stats-noise").integers(2**32),
            )
            save_error_stats(stats, paths["stats"], w=ds["stats_samples"],
                             q=ds["stats_draws"], seed=config["seed"], rmse=rmse_loc)

    grid = grid_channels = None
    if needs_net:
        grid, grid_channels = _grid_and_channels(config, cfg, scene, out_dir)

    report = run_experiment(
        cfg, scene, timing,
        fallback_scale=coefficient,
        lcnet=lcnet, coefficient=coefficient,
        lenet=lenet, zeta=zeta, stats=stats,
        grid=grid, grid_channels=grid_channels,
        methods=methods,
        snr_db=tuple(config["noise"]["snr_db"]),
        sigma_c=tuple(config["noise"]["sigma_c"]) if isinstance(config["noise"]["sigma_c"], list) else (config["noise"]["sigma_c"],),
        sigma_v=config["noise"]["sigma_v"],
        n_trajectories=exp["n_trajectories"],
        n_coct=exp["n_coct"],
        speed_range=tuple(config["speed_range"]),
        mode=exp["mode"],
        m_p=exp["m_p"],
        seed=config["seed"],
        rmse_location=rmse_loc,
    )
    out_csv = os.path.join(out_dir, "report.csv")
    report.to_csv(out_csv)
    print("wrote %s (%d rows)" % (out_csv, len(report.rows)))
    return 0


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ccmlab",
        description="Location-conditioned channel covariance estimation lab",
    )
    parser.add_argument("--config", metavar="PATH", help="JSON config file")
    parser.add_argument("--seed", type=int, help="master seed override")
    parser.add_argument("--out", metavar="DIR", help="output directory override")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen-dataset", help="generate datasets and the grid cache")
    p_train = sub.add_parser("train", help="train a network")
    p_train.add_argument("--which", choices=("lcnet", "lenet"), required=True)
    p_train.add_argument("--resume", action="store_true", help="continue from checkpoint")
    p_eval = sub.add_parser("eval", help="evaluate trained networks")
    p_eval.add_argument("--sweep", action="store_true",
                        help="training-fraction sweep instead of checkpoint eval")
    p_run = sub.add_parser("run", help="run the channel-estimation experiment")
    p_run.add_argument("--mode", choices=("constant", "dynamic"), help="trajectory mode")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "out_dir": args.out}
    if getattr(args, "mode", None):
        overrides["experiment.mode"] = args.mode
    try:
        config = load_config(args.config, overrides)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    try:
        if args.command == "gen-dataset":
            return cmd_gen_dataset(config)
        if args.command == "train":
            return cmd_train(config, args.which, resume=args.resume)
        if args.command == "eval":
            return cmd_eval(config, sweep=args.sweep)
        if args.command == "run":
            return cmd_run(config)
    except ConfigError as exc:
        print("config error: %s" % exc, file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure -> exit 1 with a message
        print("error: %s" % exc, file=sys.stderr)
        return 1
    raise AssertionError("unhandled command")


if __name__ == "__main__":
    sys.exit(main())
