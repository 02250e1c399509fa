"""Session log verification: re-derive the final state from the recorded
events and report any divergence.

The log carries per-turn digests, post-compression digests, and a final
state record. Replay rebuilds the history by re-applying the same
transitions (append messages, rewrite on compression) and re-checks every
digest, so any tampered or lost line surfaces as a located divergence."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .context import Message, estimate_tokens
from .errors import ReplayError
from .runtime import digest_messages


@dataclass
class ReplayReport:
    path: str
    records: int = 0
    turns: int = 0
    compressions: int = 0
    divergences: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.divergences

    def to_dict(self) -> dict:
        return {
            "path": self.path,
            "records": self.records,
            "turns": self.turns,
            "compressions": self.compressions,
            "divergences": self.divergences,
            "ok": self.ok,
        }


def verify_log(path: Path | str) -> ReplayReport:
    """Replay a session log. Raises ReplayError (with the line number) for
    structurally corrupt logs; semantic mismatches become divergences."""
    path = Path(path)
    report = ReplayReport(path=str(path))
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ReplayError(f"cannot read log: {exc}") from exc

    history: list[Message] = []
    turn_buffer: list[Message] = []
    start_meta: dict = {}
    usage_deltas: dict[str, dict[str, int]] = {}
    compression_level = 0
    ended = False
    saw_final = False

    for line_number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ReplayError(f"line {line_number}: invalid JSON: {exc}", line_number)
        if not isinstance(record, dict) or "type" not in record:
            raise ReplayError(f"line {line_number}: record lacks a type", line_number)
        report.records += 1
        kind = record["type"]

        if kind == "session_start":
            start_meta = record.get("skill_meta", {})
        elif kind == "message":
            try:
                message = Message.from_dict(record["message"])
            except (KeyError, TypeError) as exc:
                raise ReplayError(
                    f"line {line_number}: malformed message: {exc}", line_number
                )
            history.append(message)
            turn_buffer.append(message)
        elif kind == "skill_usage":
            delta = usage_deltas.setdefault(
                record["skill"], {"usage_count": 0, "success_count": 0}
            )
            delta["usage_count"] += 1
            if record.get("success"):
                delta["success_count"] += 1
        elif kind == "feedback":
            adjustment = int(record.get("adjustment", 0))
            skill = record.get("skill")
            if skill and adjustment:
                delta = usage_deltas.setdefault(
                    skill, {"usage_count": 0, "success_count": 0}
                )
                delta["success_count"] += adjustment
        elif kind == "compression":
            report.compressions += 1
            compression_level = int(record["level"])
            try:
                summary = Message.from_dict(record["summary_message"])
                retain = int(record["retain_recent"])
            except (KeyError, TypeError) as exc:
                raise ReplayError(
                    f"line {line_number}: malformed compression: {exc}", line_number
                )
            history = [summary] + history[-retain:]
            recorded = record.get("digest_after")
            if recorded and digest_messages(history) != recorded:
                report.divergences.append(
                    f"line {line_number}: post-compression digest mismatch "
                    f"(level {compression_level})"
                )
            tokens_after = record.get("tokens_after")
            if tokens_after is not None and estimate_tokens(history) != tokens_after:
                report.divergences.append(
                    f"line {line_number}: post-compression token estimate mismatch"
                )
        elif kind == "turn_summary":
            report.turns += 1
            recorded = record.get("digest")
            if recorded and digest_messages(turn_buffer) != recorded:
                report.divergences.append(
                    f"line {line_number}: turn {record.get('turn_index')} digest mismatch"
                )
            expected_tokens = record.get("token_estimate")
            if expected_tokens is not None and estimate_tokens(history) != expected_tokens:
                report.divergences.append(
                    f"line {line_number}: turn {record.get('turn_index')} "
                    f"token estimate mismatch"
                )
            turn_buffer = []
        elif kind == "session_end":
            ended = True
        elif kind == "final_state":
            saw_final = True
            if record.get("history_len") != len(history):
                report.divergences.append(
                    f"line {line_number}: final history length "
                    f"{len(history)} != recorded {record.get('history_len')}"
                )
            if record.get("compression_level") != compression_level:
                report.divergences.append(
                    f"line {line_number}: final compression level "
                    f"{compression_level} != recorded {record.get('compression_level')}"
                )
            expected_next = history[-1].turn_index + 1 if history else 0
            recorded_next = record.get("next_turn_index")
            if recorded_next is not None and recorded_next < expected_next:
                report.divergences.append(
                    f"line {line_number}: next_turn_index {recorded_next} behind "
                    f"replayed history ({expected_next})"
                )
            final_meta = record.get("skill_meta", {})
            for name, delta in usage_deltas.items():
                before = start_meta.get(name, {"usage_count": 0, "success_count": 0})
                after = final_meta.get(name)
                if after is None:
                    report.divergences.append(
                        f"line {line_number}: skill {name} used but absent from final meta"
                    )
                    continue
                for key in ("usage_count", "success_count"):
                    expected = before[key] + delta[key]
                    if after[key] != expected:
                        report.divergences.append(
                            f"line {line_number}: skill {name} {key} "
                            f"{after[key]} != replayed {expected}"
                        )
        else:
            raise ReplayError(
                f"line {line_number}: unknown record type {kind!r}", line_number
            )

    if report.records and ended and not saw_final:
        report.divergences.append("session_end present but final_state missing")
    return report
