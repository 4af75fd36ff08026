"""One JSON envelope for every fitted predictor, with a `kind`
discriminator, plus prediction helpers that make the model zoo
interchangeable for evaluation and beamforming.
"""

from __future__ import annotations

import gzip
import hashlib
import json
import math

import numpy as np

from .baselines import ChmatEnsemble, KrrModel, NfFieldModel, NnModel, ShRidgeModel
from .errors import SchemaError
from .geom import Direction, PointSet, cart_to_sph, sph_to_cart
from .gpr import GprModel, build_model, predict
from .kernels import ChmatKernelParams, CoeffTable, CompositeKernelParams, chmat_cross
from .nfield import NfParams
from .physics import MediumParams

MODEL_SCHEMA_VERSION = 1

KNOWN_KINDS = ("gp-steerer", "gp-chmat", "krr", "sh", "nn", "nf", "nf-gw", "pcnn")


def _real(arr) -> dict:
    arr = np.asarray(arr, dtype=float)
    return {"shape": list(arr.shape), "data": [float(v) for v in arr.reshape(-1)]}


def _load_real(doc) -> np.ndarray:
    return np.array(doc["data"], dtype=float).reshape(doc["shape"])


def _cplx(arr) -> dict:
    arr = np.asarray(arr, dtype=complex)
    flat = arr.reshape(-1)
    return {
        "shape": list(arr.shape),
        "re": [float(v) for v in flat.real],
        "im": [float(v) for v in flat.imag],
    }


def _load_cplx(doc) -> np.ndarray:
    return (np.array(doc["re"], dtype=float) + 1j * np.array(doc["im"], dtype=float)).reshape(
        doc["shape"]
    )


def _dirs_out(dirs) -> list:
    return [{"azimuth": float(d.azimuth), "colatitude": float(d.colatitude)} for d in dirs]


def _dirs_in(doc) -> list:
    return [Direction(float(d["azimuth"]), float(d["colatitude"])) for d in doc]


def _nf_out(nf: NfParams) -> dict:
    return {
        "enc_w": _real(nf.enc_w),
        "enc_b": _real(nf.enc_b),
        "hidden": [[_real(w), _real(b)] for w, b in nf.hidden],
        "head_w": _real(nf.head_w),
        "gains": _real(nf.gains),
    }


def _nf_in(doc) -> NfParams:
    return NfParams(
        enc_w=_load_real(doc["enc_w"]),
        enc_b=_load_real(doc["enc_b"]),
        hidden=[(_load_real(w), _load_real(b)) for w, b in doc["hidden"]],
        head_w=_load_real(doc["head_w"]),
        gains=_load_real(doc["gains"]),
    )


def _points_out(ps: PointSet) -> dict:
    return {"omega": _real(ps.omega), "mic": _real(ps.mic), "src": _real(ps.src)}


def _points_in(doc) -> PointSet:
    return PointSet(_load_real(doc["omega"]), _load_real(doc["mic"]), _load_real(doc["src"]))


def _table_out(table: CoeffTable | None):
    if table is None:
        return None
    return {
        "omegas": _real(table.omegas),
        "mic_positions": _real(table.mic_positions),
        "degree": int(table.degree),
        "coeffs": _cplx(table.coeffs),
    }


def _table_in(doc) -> CoeffTable | None:
    if doc is None:
        return None
    return CoeffTable(
        omegas=_load_real(doc["omegas"]),
        mic_positions=_load_real(doc["mic_positions"]),
        degree=int(doc["degree"]),
        coeffs=_load_cplx(doc["coeffs"]),
    )


def train_directions(model) -> list:
    """Observed source directions retained by any fitted model."""
    if isinstance(model, GprModel):
        q0 = model.kernel.q0 if hasattr(model.kernel, "q0") else np.zeros(3)
        uniq = np.unique(np.round(model.train.src, 12), axis=0)
        return [cart_to_sph(row - q0)[0] for row in uniq]
    return list(model.train_dirs)


def model_mic_positions(model) -> np.ndarray:
    """The microphone layout a fitted model was trained on."""
    if isinstance(model, GprModel):
        if isinstance(model.kernel, CompositeKernelParams) and model.kernel.table is not None:
            return model.kernel.table.mic_positions
        return np.unique(np.round(model.train.mic, 12), axis=0)
    return np.asarray(model.mic_positions)


def check_compatible(model, dataset) -> None:
    """Raise when the dataset's array geometry differs from the model's."""
    mics = model_mic_positions(model)
    ds_mics = dataset.mic_positions
    if mics.shape != ds_mics.shape or not np.allclose(np.sort(mics, axis=0), np.sort(ds_mics, axis=0), atol=1e-9):
        raise ValueError(
            f"model was fitted on {mics.shape[0]} microphone(s) at different positions "
            f"than the dataset's {ds_mics.shape[0]}"
        )


def _gp_steerer_out(model: GprModel) -> dict:
    k: CompositeKernelParams = model.kernel
    return {
        "scalars": {
            "log_alpha": float(k.log_alpha),
            "log_ell": float(k.log_ell),
            "log_noise": float(k.log_noise),
        },
        "sh_order": int(k.sh_order),
        "q0": _real(k.q0),
        "bounds": {"lo": _real(k.bounds[0]), "hi": _real(k.bounds[1])},
        "table": _table_out(k.table),
        "nf": _nf_out(k.nf),
        "speed_of_sound": float(k.medium.speed_of_sound),
        "train": _points_out(model.train),
        "train_values": _cplx(model.y),
        "jitter": model.jitter,
        "predict_cap": int(model.predict_cap),
        "history": model.history,
    }


def _gp_steerer_in(doc, seed, digest) -> GprModel:
    kernel = CompositeKernelParams(
        log_alpha=float(doc["scalars"]["log_alpha"]),
        log_ell=float(doc["scalars"]["log_ell"]),
        log_noise=float(doc["scalars"]["log_noise"]),
        sh_order=int(doc["sh_order"]),
        nf=_nf_in(doc["nf"]),
        q0=_load_real(doc["q0"]),
        bounds=(_load_real(doc["bounds"]["lo"]), _load_real(doc["bounds"]["hi"])),
        table=_table_in(doc["table"]),
        medium=MediumParams(float(doc["speed_of_sound"])),
    )
    return build_model(
        "gp-steerer",
        kernel,
        _points_in(doc["train"]),
        _load_cplx(doc["train_values"]),
        jitter=doc["jitter"],
        predict_cap=int(doc["predict_cap"]),
        seed=seed,
        config_digest=digest,
        history=doc.get("history", []),
    )


def _chmat_channel_out(model: GprModel) -> dict:
    k: ChmatKernelParams = model.kernel
    return {
        "scalars": {
            "log_alpha": float(k.log_alpha),
            "log_ell": float(k.log_ell),
            "log_ell_d": float(k.log_ell_d),
            "log_noise": float(k.log_noise),
        },
        "q0": _real(k.q0),
        "speed_of_sound": float(k.medium.speed_of_sound),
        "train": _points_out(model.train),
        "train_values": _cplx(model.y),
        "jitter": model.jitter,
        "predict_cap": int(model.predict_cap),
    }


def _chmat_channel_in(doc, seed) -> GprModel:
    kernel = ChmatKernelParams(
        log_alpha=float(doc["scalars"]["log_alpha"]),
        log_ell=float(doc["scalars"]["log_ell"]),
        log_ell_d=float(doc["scalars"]["log_ell_d"]),
        log_noise=float(doc["scalars"]["log_noise"]),
        q0=_load_real(doc["q0"]),
        medium=MediumParams(float(doc["speed_of_sound"])),
    )
    return build_model(
        "gp-chmat-channel",
        kernel,
        _points_in(doc["train"]),
        _load_cplx(doc["train_values"]),
        jitter=doc["jitter"],
        predict_cap=int(doc["predict_cap"]),
        seed=seed,
    )


def save_model(model, path: str) -> str:
    """Write the JSON envelope; returns the content digest."""
    doc = {
        "schema_version": MODEL_SCHEMA_VERSION,
        "kind": model.kind,
        "seed": int(getattr(model, "seed", 0)),
        "config_digest": getattr(model, "config_digest", ""),
        "train_directions": _dirs_out(train_directions(model)),
    }
    if isinstance(model, GprModel):
        doc["payload"] = _gp_steerer_out(model)
    elif isinstance(model, ChmatEnsemble):
        doc["payload"] = {
            "frequencies": _real(model.frequencies),
            "mic_positions": _real(model.mic_positions),
            "channels": [_chmat_channel_out(ch) for ch in model.channels],
            "history": model.history,
        }
    elif isinstance(model, KrrModel):
        doc["payload"] = {
            "frequencies": _real(model.frequencies),
            "mic_positions": _real(model.mic_positions),
            "lam": float(model.lam),
            "channels": [
                {
                    "scalars": {
                        "log_alpha": float(k.log_alpha),
                        "log_ell": float(k.log_ell),
                        "log_ell_d": float(k.log_ell_d),
                        "log_noise": float(k.log_noise),
                    },
                    "q0": _real(k.q0),
                    "speed_of_sound": float(k.medium.speed_of_sound),
                    "train": _points_out(tr),
                    "alphas": _cplx(al),
                }
                for k, tr, al in zip(model.kernels, model.trains, model.alphas)
            ],
        }
    elif isinstance(model, ShRidgeModel):
        doc["payload"] = {
            "frequencies": _real(model.frequencies),
            "mic_positions": _real(model.mic_positions),
            "order": int(model.order),
            "lam": float(model.lam),
            "coeffs": _cplx(model.coeffs),
        }
    elif isinstance(model, NnModel):
        doc["payload"] = {
            "frequencies": _real(model.frequencies),
            "mic_positions": _real(model.mic_positions),
            "values": _cplx(model.values),
        }
    elif isinstance(model, NfFieldModel):
        doc["payload"] = {
            "nf": _nf_out(model.nf),
            "bounds": {"lo": _real(model.bounds[0]), "hi": _real(model.bounds[1])},
            "q0": _real(model.q0),
            "reference": _real(model.reference),
            "order": None if model.order is None else int(model.order),
            "speed_of_sound": float(model.medium.speed_of_sound),
            "frequencies": _real(model.frequencies),
            "mic_positions": _real(model.mic_positions),
            "history": model.history,
        }
    else:
        raise ValueError(f"cannot serialize model of type {type(model).__name__}")
    payload = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode()
    if str(path).endswith(".gz"):
        with gzip.GzipFile(filename="", mode="wb", fileobj=open(path, "wb"), mtime=0) as fh:
            fh.write(payload)
    else:
        with open(path, "wb") as fh:
            fh.write(payload)
    return hashlib.sha256(payload).hexdigest()


def load_model(path: str):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as fh:
        try:
            doc = json.loads(fh.read().decode())
        except (ValueError, OSError) as exc:
            raise SchemaError(f"/: not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise SchemaError("/: expected a JSON object")
    if doc.get("schema_version") != MODEL_SCHEMA_VERSION:
        raise SchemaError(
            f"/schema_version: unsupported version {doc.get('schema_version')!r}"
        )
    kind = doc.get("kind")
    if kind not in KNOWN_KINDS:
        raise SchemaError(f"/kind: unknown model kind {kind!r}")
    seed = int(doc.get("seed", 0))
    digest = doc.get("config_digest", "")
    payload = doc.get("payload")
    if not isinstance(payload, dict):
        raise SchemaError("/payload: missing model payload")
    train_dirs = _dirs_in(doc.get("train_directions", []))
    try:
        if kind == "gp-steerer":
            return _gp_steerer_in(payload, seed, digest)
        if kind == "gp-chmat":
            return ChmatEnsemble(
                frequencies=_load_real(payload["frequencies"]),
                mic_positions=_load_real(payload["mic_positions"]),
                train_dirs=train_dirs,
                channels=[_chmat_channel_in(ch, seed) for ch in payload["channels"]],
                seed=seed,
                config_digest=digest,
                history=payload.get("history", []),
            )
        if kind == "krr":
            kernels, trains, alphas = [], [], []
            for ch in payload["channels"]:
                kernels.append(
                    ChmatKernelParams(
                        log_alpha=float(ch["scalars"]["log_alpha"]),
                        log_ell=float(ch["scalars"]["log_ell"]),
                        log_ell_d=float(ch["scalars"]["log_ell_d"]),
                        log_noise=float(ch["scalars"]["log_noise"]),
                        q0=_load_real(ch["q0"]),
                        medium=MediumParams(float(ch["speed_of_sound"])),
                    )
                )
                trains.append(_points_in(ch["train"]))
                alphas.append(_load_cplx(ch["alphas"]))
            return KrrModel(
                frequencies=_load_real(payload["frequencies"]),
                mic_positions=_load_real(payload["mic_positions"]),
                train_dirs=train_dirs,
                kernels=kernels,
                trains=trains,
                alphas=alphas,
                lam=float(payload["lam"]),
                seed=seed,
                config_digest=digest,
            )
        if kind == "sh":
            return ShRidgeModel(
                frequencies=_load_real(payload["frequencies"]),
                mic_positions=_load_real(payload["mic_positions"]),
                train_dirs=train_dirs,
                order=int(payload["order"]),
                lam=float(payload["lam"]),
                coeffs=_load_cplx(payload["coeffs"]),
                seed=seed,
                config_digest=digest,
            )
        if kind == "nn":
            return NnModel(
                frequencies=_load_real(payload["frequencies"]),
                mic_positions=_load_real(payload["mic_positions"]),
                train_dirs=train_dirs,
                values=_load_cplx(payload["values"]),
                seed=seed,
                config_digest=digest,
            )
        return NfFieldModel(
            kind=kind,
            nf=_nf_in(payload["nf"]),
            bounds=(_load_real(payload["bounds"]["lo"]), _load_real(payload["bounds"]["hi"])),
            q0=_load_real(payload["q0"]),
            reference=_load_real(payload["reference"]),
            order=None if payload["order"] is None else int(payload["order"]),
            medium=MediumParams(float(payload["speed_of_sound"])),
            frequencies=_load_real(payload["frequencies"]),
            mic_positions=_load_real(payload["mic_positions"]),
            train_dirs=train_dirs,
            seed=seed,
            config_digest=digest,
            history=payload.get("history", []),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, SchemaError):
            raise
        raise SchemaError(f"/payload: malformed {kind} model ({exc})") from exc


def predict_grid(model, dataset) -> np.ndarray:
    """(F, I, J) predictions on the dataset's full grid, any model kind."""
    if isinstance(model, GprModel):
        mean, _ = predict(model, dataset.point_set(), want_var=False)
        return mean.reshape(dataset.shape)
    return model.predict_grid(dataset)


def predict_directions(model, dataset, dirs, freq_indices) -> np.ndarray:
    """(Fq, I, Jd) predictions at arbitrary directions on dataset frequencies.

    Grid-bound interpolators (nearest-neighbor, SH ridge) evaluate at the
    indexed dataset frequencies; continuous models evaluate the same values.
    """
    freq_indices = np.asarray(freq_indices, dtype=int).reshape(-1)
    freqs = dataset.frequencies[freq_indices]
    mics = dataset.mic_positions
    radius = dataset.source_radius
    q0 = dataset.q0
    f_q, i_n, j_d = freqs.shape[0], mics.shape[0], len(dirs)

    if isinstance(model, NnModel):
        units = np.array([d.unit_vector() for d in model.train_dirs])
        q_units = np.array([d.unit_vector() for d in dirs])
        nearest = np.argmax(q_units @ units.T, axis=1)
        return model.values[freq_indices][:, :, nearest]
    if isinstance(model, ShRidgeModel):
        from .sphharm import sh_basis_matrix

        basis = sh_basis_matrix(model.order, dirs)
        return np.einsum("fid,jd->fij", model.coeffs[freq_indices], basis)

    src = np.array([q0 + sph_to_cart(d, radius) for d in dirs])
    omegas = 2.0 * math.pi * freqs
    om = np.repeat(omegas, i_n * j_d)
    mic = np.tile(np.repeat(mics, j_d, axis=0), (f_q, 1))
    srcs = np.tile(src, (f_q * i_n, 1))
    ps = PointSet(om, mic, srcs)
    if isinstance(model, GprModel):
        mean, _ = predict(model, ps, want_var=False)
        return mean.reshape(f_q, i_n, j_d)
    if isinstance(model, (ChmatEnsemble, KrrModel)):
        out = np.empty((f_q, i_n, j_d), dtype=complex)
        for i in range(i_n):
            idx = (np.arange(f_q)[:, None] * i_n + i) * j_d + np.arange(j_d)[None, :]
            sub = ps.take(idx.reshape(-1))
            if isinstance(model, ChmatEnsemble):
                mean, _ = predict(model.channels[i], sub, want_var=False)
            else:
                mean = chmat_cross(sub, model.trains[i], model.kernels[i]) @ model.alphas[i]
            out[:, i, :] = mean.reshape(f_q, j_d)
        return out
    if isinstance(model, NfFieldModel):
        return model.predict_points(ps).reshape(f_q, i_n, j_d)
    raise ValueError(f"cannot predict with model of type {type(model).__name__}")
