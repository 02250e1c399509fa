"""Soak harness: long deterministic single-session runs against the mock
provider, measuring the compression and error behavior the runtime promises.

Turn content is generated from a seeded grid of products, markets, and
scenarios so runs are reproducible byte-for-byte given (seed, turns). The
early turns exercise every default skill trigger so skill_reference assets
enter the context before the first compression."""

from __future__ import annotations

import random
import time
from dataclasses import dataclass, field
from pathlib import Path

from .context import ContextBudget, estimate_tokens, extract_asset_index
from .matching import MatcherConfig
from .providers import CannedChatProvider, HashEmbeddingProvider
from .runtime import (
    RuntimeDeps,
    SessionLog,
    end_session,
    new_session,
    run_turn,
)
from .skills import classify_maturity, load_store
from .tools import builtin_registry
from .workspace import init_workspace

PRODUCTS = (
    "solar inverters",
    "lithium battery packs",
    "industrial bearings",
    "ceramic tiles",
    "LED floodlights",
    "hydraulic pumps",
)
MARKETS = ("Germany", "Brazil", "Vietnam", "Nigeria", "the United States", "Poland")
SCENARIOS = (
    "prepare a quotation for {qty} units of {product} shipped to {market}",
    "look up the hs code and customs classification for {product}",
    "draft a market analysis of demand for {product} in {market}",
    "reply to a price inquiry about {product} from a buyer in {market}",
    "compare freight options for sending {product} to {market}",
    "summarize payment terms we should offer a distributor in {market}",
)

# One per default skill; cycled through the first turns so every default
# skill gets a skill_reference asset into the context early.
TRIGGER_OPENERS = (
    "I need a quotation today:",
    "Check the hs code first:",
    "Give me a market analysis:",
)


def generate_turn(rng: random.Random, turn_number: int, pad_chars: int) -> str:
    product = rng.choice(PRODUCTS)
    market = rng.choice(MARKETS)
    scenario = rng.choice(SCENARIOS).format(
        product=product, market=market, qty=rng.randrange(100, 5000, 100)
    )
    opener = ""
    if turn_number < len(TRIGGER_OPENERS) * 3:
        opener = TRIGGER_OPENERS[turn_number % len(TRIGGER_OPENERS)] + " "
    detail = " ".join(
        f"detail-{rng.randrange(10_000)}" for _ in range(max(pad_chars // 12, 1))
    )
    return f"{opener}Turn {turn_number}: please {scenario}. Context: {detail}"


@dataclass
class SoakReport:
    turns_requested: int
    turns_completed: int = 0
    compressions: int = 0
    errors: list[str] = field(default_factory=list)
    token_estimates: list[int] = field(default_factory=list)
    final_compression_level: int = 0
    skill_maturity: dict[str, dict] = field(default_factory=dict)
    preserved_skill_assets: list[str] = field(default_factory=list)
    missing_skill_assets: list[str] = field(default_factory=list)
    elapsed_seconds: float = 0.0
    session_log: str | None = None

    @property
    def ok(self) -> bool:
        return not self.errors and not self.missing_skill_assets

    def to_dict(self) -> dict:
        return {
            "turns_requested": self.turns_requested,
            "turns_completed": self.turns_completed,
            "compressions": self.compressions,
            "errors": self.errors,
            "final_compression_level": self.final_compression_level,
            "max_token_estimate": max(self.token_estimates, default=0),
            "skill_maturity": self.skill_maturity,
            "preserved_skill_assets": self.preserved_skill_assets,
            "missing_skill_assets": self.missing_skill_assets,
            "elapsed_seconds": round(self.elapsed_seconds, 3),
            "session_log": self.session_log,
            "ok": self.ok,
        }


def run_soak(
    data_root: Path,
    turns: int,
    max_tokens: int = 64000,
    retain_recent: int = 10,
    seed: int = 0,
    user_id: str = "soak",
    pad_chars: int = 700,
    reply_chars: int = 900,
    early_asset_turns: int = 20,
) -> SoakReport:
    """Run ``turns`` sequential turns in one session and verify that every
    skill_reference asset introduced in the first ``early_asset_turns``
    turns is still extractable from the final context."""
    started = time.monotonic()
    report = SoakReport(turns_requested=turns)
    rng = random.Random(seed)

    workspace = init_workspace(Path(data_root), user_id)
    store = load_store(workspace.root)
    deps = RuntimeDeps(
        workspace=workspace,
        store=store,
        registry=builtin_registry(workspace),
        chat_provider=CannedChatProvider(reply_chars=reply_chars),
        embed_provider=HashEmbeddingProvider(),
        matcher_config=MatcherConfig(),
        budget=ContextBudget(max_tokens=max_tokens, retain_recent=retain_recent),
    )
    state = new_session(user_id, workspace, store)
    log = SessionLog(workspace.sessions_dir / f"{state.session_id}.jsonl")
    log.session_start(state, store, deps.budget)
    report.session_log = str(log.path)

    early_assets: set[str] = set()
    for turn_number in range(turns):
        text = generate_turn(rng, turn_number, pad_chars)
        level_before = state.compression.level
        try:
            state, result = run_turn(state, text, deps, log)
        except Exception as exc:  # any escape is exactly what soak exists to catch
            report.errors.append(f"turn {turn_number}: {type(exc).__name__}: {exc}")
            break
        report.turns_completed += 1
        report.token_estimates.append(estimate_tokens(state.history))
        if state.compression.level > level_before:
            report.compressions += state.compression.level - level_before
        if result.tool_errors:
            report.errors.append(f"turn {turn_number}: tool errors {result.tool_errors}")
        if turn_number < early_asset_turns and result.skill_used:
            early_assets.add(result.skill_used)

    report.final_compression_level = state.compression.level
    final_assets = {
        asset.value
        for asset in extract_asset_index(state.history)
        if asset.kind == "skill_reference"
    }
    for name in sorted(early_assets):
        if name in final_assets:
            report.preserved_skill_assets.append(name)
        else:
            report.missing_skill_assets.append(name)

    for skill in store.skills():
        report.skill_maturity[skill.name] = {
            "maturity": classify_maturity(skill.meta).label,
            "usage_count": skill.meta.usage_count,
            "success_count": skill.meta.success_count,
        }

    if state.phase.value == "open":
        end_session(state, store, log)
    report.elapsed_seconds = time.monotonic() - started
    return report
