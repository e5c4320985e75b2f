"""Append-only persistence for study sessions and responses.

One JSON-lines log per experiment. Every state change is an appended event,
flushed immediately; replaying a log reconstructs the exact session states,
which is both the crash-recovery path and the audit trail.
"""

import json
import threading
import time
from pathlib import Path

from .sessions import (
    ResponseRecord, StudyError, StudySession, trial_from_dict, trial_to_dict,
)


class ConflictError(StudyError):
    """Out-of-order or contradictory submission."""


class UnknownSession(StudyError):
    pass


class EventLog:
    """Single-appender JSON-lines log."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = None

    def replay(self):
        if not self.path.exists():
            return []
        events = []
        with self.path.open("r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    events.append(json.loads(line))
        return events

    def append(self, event):
        if self._fh is None:
            self._fh = self.path.open("a", encoding="utf-8")
        self._fh.write(json.dumps(event, sort_keys=True) + "\n")
        self._fh.flush()

    def close(self):
        if self._fh is not None:
            self._fh.close()
            self._fh = None


class ExperimentStore:
    """All session state for one experiment, backed by an event log."""

    def __init__(self, log_path):
        self.log = EventLog(log_path)
        self.sessions = {}
        self._lock = threading.Lock()
        for event in self.log.replay():
            self._apply(event)

    def _apply(self, event):
        if event["type"] == "session":
            s = event["session"]
            session = StudySession(
                session_id=s["session_id"],
                experiment_id=s["experiment_id"],
                demographics=s["demographics"],
                trials=[trial_from_dict(t) for t in s["trials"]],
            )
            self.sessions[session.session_id] = session
        elif event["type"] == "response":
            session = self.sessions[event["session_id"]]
            rec = ResponseRecord(trial_index=event["trial_index"],
                                 choice=event["choice"],
                                 response_ms=event["response_ms"],
                                 timestamp=event["timestamp"])
            session.responses[rec.trial_index] = rec
            session.cursor = rec.trial_index + 1
            session.completed = session.cursor == len(session.trials)
        else:
            raise StudyError(f"unknown event type {event['type']!r}")

    def add_session(self, session):
        with self._lock:
            self.log.append({
                "type": "session",
                "session": {
                    "session_id": session.session_id,
                    "experiment_id": session.experiment_id,
                    "demographics": session.demographics,
                    "trials": [trial_to_dict(t) for t in session.trials],
                },
            })
            self.sessions[session.session_id] = session

    def get(self, session_id):
        session = self.sessions.get(session_id)
        if session is None:
            raise UnknownSession(f"unknown session {session_id!r}")
        return session

    def submit(self, session_id, trial_index, choice, response_ms):
        """Record one response; idempotent on an exact duplicate of the
        previous submission."""
        with self._lock:
            session = self.get(session_id)
            if choice not in ("A", "B"):
                raise StudyError(f"choice must be A or B, got {choice!r}")
            if response_ms < 0:
                raise StudyError("response_ms must be nonnegative")
            prev = session.responses.get(trial_index)
            if prev is not None:
                if prev.choice == choice and prev.response_ms == response_ms:
                    return session  # exact duplicate: ack, no second record
                raise ConflictError(
                    f"trial {trial_index} already answered differently")
            if session.completed:
                raise ConflictError("session already completed")
            if trial_index != session.cursor:
                raise ConflictError(
                    f"expected trial {session.cursor}, got {trial_index}")
            event = {
                "type": "response",
                "session_id": session_id,
                "trial_index": trial_index,
                "choice": choice,
                "response_ms": int(response_ms),
                "timestamp": time.time(),
            }
            self.log.append(event)
            self._apply(event)
            return session
