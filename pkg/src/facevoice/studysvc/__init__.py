from .sessions import (
    ExperimentSpec, PairingPools, PoolExhausted, StudyError, StudySession,
    Trial, aggregate_sessions, build_experiments, evaluate_session,
    session_seed, validate_demographics,
)
from .store import ConflictError, EventLog, ExperimentStore, UnknownSession
from .service import StudyService, StudyServiceConfig, create_app, serve

__all__ = [
    "ExperimentSpec", "PairingPools", "PoolExhausted", "StudyError",
    "StudySession", "Trial", "aggregate_sessions", "build_experiments",
    "evaluate_session", "session_seed", "validate_demographics",
    "ConflictError", "EventLog", "ExperimentStore", "UnknownSession",
    "StudyService", "StudyServiceConfig", "create_app", "serve",
]
