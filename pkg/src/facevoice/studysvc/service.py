"""HTTP study-administration service.

JSON API over the session store plus a static mount for stimulus assets.
Endpoints: POST /api/sessions, GET /api/sessions/{id}/next,
POST /api/sessions/{id}/responses, GET /api/experiments/{id}/aggregate,
GET /api/health. Configured from a flat key=value file.
"""

import math
from dataclasses import dataclass
from pathlib import Path

from fastapi import FastAPI, HTTPException
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from ..configfile import parse_kv
from ..datamodel import load_manifest
from .sessions import (
    PairingPools, PoolExhausted, StudyError, StudySession, aggregate_sessions,
    build_experiments, derive_seed, session_seed, validate_demographics,
)
from .store import ConflictError, ExperimentStore, UnknownSession


@dataclass
class StudyServiceConfig:
    manifest_path: str
    data_dir: str
    asset_dir: str | None = None
    port: int = 8000
    seed: int = 0
    pairs_per_identity: int = 8
    gefa_ethnicity: int = 5
    gefa_fluency: str = "Y"
    gefa_age_group: str = "20s"
    frontend_dir: str | None = None

    @classmethod
    def from_file(cls, path):
        kv = parse_kv(path)
        base = Path(path).parent
        for required in ("manifest", "data_dir"):
            if required not in kv:
                raise ValueError(f"{path}: missing required key {required!r}")

        def resolve(key, default=None):
            if key not in kv:
                return default
            p = Path(kv[key])
            return str(p if p.is_absolute() else base / p)

        return cls(
            manifest_path=resolve("manifest"),
            data_dir=resolve("data_dir"),
            asset_dir=resolve("asset_dir"),
            port=int(kv.get("port", 8000)),
            seed=int(kv.get("seed", 0)),
            pairs_per_identity=int(kv.get("pairs_per_identity", 8)),
            gefa_ethnicity=int(kv.get("gefa_ethnicity", 5)),
            gefa_fluency=kv.get("gefa_fluency", "Y"),
            gefa_age_group=kv.get("gefa_age_group", "20s"),
            frontend_dir=resolve("frontend_dir"),
        )


class CreateSessionBody(BaseModel):
    experiment_id: str
    demographics: dict


class SubmitBody(BaseModel):
    trial_index: int
    choice: str
    response_ms: int = 0


def _json_safe(obj):
    """Replace non-finite floats (possible in degenerate t stats) for JSON."""
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


class StudyService:
    """Service state: experiments, pairing pools, per-experiment stores."""

    def __init__(self, config):
        self.config = config
        self.manifest = load_manifest(config.manifest_path,
                                      check_features=False)
        self.experiments = build_experiments(config.gefa_ethnicity,
                                             config.gefa_fluency,
                                             config.gefa_age_group)
        self.pools = {}
        self.stores = {}
        data_dir = Path(config.data_dir)
        for exp_id, spec in self.experiments.items():
            self.stores[exp_id] = ExperimentStore(data_dir / f"{exp_id}.log")

    def pool(self, exp_id):
        # pools are built lazily so a manifest that cannot satisfy one
        # experiment's constraint still serves the others
        if exp_id not in self.pools:
            spec = self.experiments[exp_id]
            self.pools[exp_id] = PairingPools(
                self.manifest, spec,
                seed=derive_seed(self.config.seed, exp_id, "pool"),
                pairs_per_identity=self.config.pairs_per_identity)
        return self.pools[exp_id]

    def create_session(self, experiment_id, demographics):
        if experiment_id not in self.experiments:
            raise UnknownSession(f"unknown experiment {experiment_id!r}")
        demo = validate_demographics(demographics)
        seed = session_seed(self.config.seed, experiment_id, demo)
        trials = self.pool(experiment_id).build_sequence(seed)
        store = self.stores[experiment_id]
        sid = f"{experiment_id}-{len(store.sessions):05d}-{seed & 0xFFFFFF:06x}"
        session = StudySession(session_id=sid, experiment_id=experiment_id,
                               demographics=demo, trials=trials)
        store.add_session(session)
        return session

    def find_store(self, session_id):
        for store in self.stores.values():
            if session_id in store.sessions:
                return store
        raise UnknownSession(f"unknown session {session_id!r}")


def create_app(config):
    svc = StudyService(config)
    app = FastAPI(title="facevoice study service")
    app.state.service = svc

    @app.get("/api/health")
    def health():
        return {"ok": True, "experiments": sorted(svc.experiments)}

    @app.post("/api/sessions")
    def create_session(body: CreateSessionBody):
        try:
            session = svc.create_session(body.experiment_id, body.demographics)
        except PoolExhausted as e:
            raise HTTPException(status_code=409, detail=str(e))
        except (UnknownSession, StudyError) as e:
            raise HTTPException(status_code=400, detail=str(e))
        return {"session_id": session.session_id,
                "experiment_id": session.experiment_id,
                "n_trials": len(session.trials)}

    @app.get("/api/sessions/{session_id}/next")
    def next_trial(session_id: str):
        try:
            store = svc.find_store(session_id)
            session = store.get(session_id)
        except UnknownSession as e:
            raise HTTPException(status_code=404, detail=str(e))
        if session.completed:
            return {"done": True, "completion_code": session.completion_code}
        trial = session.trials[session.cursor]
        return {"done": False,
                "trial": trial.payload(session.cursor, len(session.trials))}

    @app.post("/api/sessions/{session_id}/responses")
    def submit_response(session_id: str, body: SubmitBody):
        try:
            store = svc.find_store(session_id)
            session = store.submit(session_id, body.trial_index, body.choice,
                                   body.response_ms)
        except UnknownSession as e:
            raise HTTPException(status_code=404, detail=str(e))
        except ConflictError as e:
            raise HTTPException(status_code=409, detail=str(e))
        except StudyError as e:
            raise HTTPException(status_code=400, detail=str(e))
        return {"accepted": True, "next_index": session.cursor,
                "completed": session.completed}

    @app.get("/api/experiments/{experiment_id}/aggregate")
    def aggregate(experiment_id: str):
        if experiment_id not in svc.stores:
            raise HTTPException(status_code=404,
                                detail=f"unknown experiment {experiment_id!r}")
        try:
            result = aggregate_sessions(
                list(svc.stores[experiment_id].sessions.values()))
        except StudyError as e:
            raise HTTPException(status_code=409, detail=str(e))
        return _json_safe(result)

    if config.asset_dir:
        app.mount("/assets", StaticFiles(directory=config.asset_dir),
                  name="assets")
    if config.frontend_dir and Path(config.frontend_dir).is_dir():
        app.mount("/", StaticFiles(directory=config.frontend_dir, html=True),
                  name="frontend")
    return app


def serve(config):
    import uvicorn
    app = create_app(config)
    uvicorn.run(app, host="0.0.0.0", port=config.port, log_level="info")
