"""Command-line front door: interactive chat, skill administration, memory
inspection, evolution trigger, session replay, the soak harness, and the
embedded HTTP server.

Exit codes: 0 success, 1 usage error, 2 runtime error, 3 verification
failure (replay divergence or failed soak check)."""

from __future__ import annotations

import json
import sys
from dataclasses import replace
from pathlib import Path

import click

from .config import ApiConfig, build_providers, load_config
from .errors import HarnessError, ReplayError
from .evolution import run_evolution
from .replay import verify_log
from .runtime import SessionManager
from .skills import classify_maturity, load_store, parse_skill, write_skill
from .soak import run_soak
from .workspace import init_workspace

EXIT_USAGE = 1
EXIT_RUNTIME = 2
EXIT_VERIFICATION = 3


class VerificationFailure(Exception):
    """Completed run whose checks did not hold; maps to exit code 3."""


def _load(ctx) -> ApiConfig:
    config_path = ctx.obj.get("config_path")
    config = load_config(config_path)
    provider = ctx.obj.get("provider")
    if provider:
        config = replace(config, provider=provider)
    return config


def _emit(data: dict, as_json: bool, human: str | None = None) -> None:
    if as_json:
        click.echo(json.dumps(data, ensure_ascii=False))
    elif human is not None:
        click.echo(human)


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False),
              default=None, help="YAML config file")
@click.option("--provider", type=click.Choice(["mock", "live"]), default=None,
              help="override the configured provider mode")
@click.pass_context
def cli(ctx, config_path, provider):
    """Self-evolving skill agent harness."""
    ctx.ensure_object(dict)
    ctx.obj["config_path"] = config_path
    ctx.obj["provider"] = provider


# -- chat ------------------------------------------------------------------

def render_event(event: dict) -> str | None:
    kind = event.get("type")
    if kind == "match_result":
        if event.get("skill"):
            return "[skill: {skill} via {match_type} {confidence:.2f}]".format(**event)
        return None
    if kind == "tool_started":
        return f"[tool: {event['tool']} started]"
    if kind == "tool_finished":
        status = "error" if event.get("error") else "ok"
        return f"[tool: {event['tool']} {status}]"
    if kind == "compression":
        return f"[context compressed (level {event['level']})]"
    if kind == "error":
        return f"[error: {event['message']}]"
    if kind == "turn_summary" and not event.get("success"):
        return "[turn failed]"
    return None


@cli.command()
@click.option("--user", "user_id", required=True, help="user id")
@click.option("--json", "as_json", is_flag=True, help="emit events as JSON lines")
@click.pass_context
def chat(ctx, user_id, as_json):
    """Interactive chat REPL. /end closes the session, /feedback +|-
    overrides the last turn's success verdict."""
    config = _load(ctx)
    manager = SessionManager(config)
    state = manager.create_session(user_id)
    if not as_json:
        click.echo(f"session {state.session_id} (user {user_id}); /end to finish")
    last_turn_index: int | None = None
    while True:
        try:
            line = click.prompt("you", prompt_suffix="> ", show_default=False)
        except (click.Abort, EOFError):
            break
        line = line.strip()
        if not line:
            continue
        if line == "/end":
            ended = manager.end_session(state.session_id)
            _emit({"type": "session_end", "phase": ended.phase.value}, as_json,
                  f"[session ended; phase {ended.phase.value}]")
            break
        if line.startswith("/feedback"):
            if last_turn_index is None:
                click.echo("[no turn to rate]")
                continue
            positive = not line.removeprefix("/feedback").strip().startswith("-")
            adjustment = manager.feedback(state.session_id, last_turn_index, positive)
            _emit({"type": "feedback", "turn_index": last_turn_index,
                   "positive": positive, "adjustment": adjustment}, as_json,
                  f"[feedback recorded; adjustment {adjustment:+d}]")
            continue
        for event in manager.stream_message(state.session_id, line):
            if as_json:
                click.echo(json.dumps(event, ensure_ascii=False))
            elif event.get("type") == "delta":
                click.echo(event["text"], nl=False)
            else:
                rendered = render_event(event)
                if rendered:
                    click.echo(rendered)
            if event.get("type") == "turn_summary":
                last_turn_index = event.get("turn_index")
        if not as_json:
            click.echo()


# -- skills ----------------------------------------------------------------

@cli.group()
def skills():
    """Inspect and administer the per-user skill store."""


def _user_store(ctx, user_id):
    config = _load(ctx)
    workspace = init_workspace(Path(config.data_root), user_id)
    return load_store(workspace.root)


def _skill_row(skill) -> dict:
    return {
        "name": skill.name,
        "description": skill.desc,
        "triggers": list(skill.triggers),
        "maturity": classify_maturity(skill.meta).label,
        "usage_count": skill.meta.usage_count,
        "success_count": skill.meta.success_count,
        "success_rate": round(skill.meta.success_rate, 4),
        "requires_sub_agent": skill.requires_sub_agent,
    }


@skills.command("list")
@click.option("--user", "user_id", required=True)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
def skills_list(ctx, user_id, as_json):
    store = _user_store(ctx, user_id)
    rows = [_skill_row(s) for s in store.skills()]
    if as_json:
        for row in rows:
            click.echo(json.dumps(row, ensure_ascii=False))
        return
    if not rows:
        click.echo("(no skills)")
        return
    width = max(len(r["name"]) for r in rows)
    for row in rows:
        click.echo(
            f"{row['name']:<{width}}  {row['maturity']:<10}  "
            f"uses={row['usage_count']:<4} rate={row['success_rate']:.2f}"
        )


@skills.command("show")
@click.argument("name")
@click.option("--user", "user_id", required=True)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
def skills_show(ctx, name, user_id, as_json):
    skill = _user_store(ctx, user_id).get(name)
    row = _skill_row(skill)
    row["instructions"] = skill.instr
    row["references"] = dict(skill.refs)
    if as_json:
        click.echo(json.dumps(row, ensure_ascii=False))
        return
    for key in ("name", "description", "maturity", "usage_count", "success_rate"):
        click.echo(f"{key}: {row[key]}")
    click.echo("triggers: " + ", ".join(row["triggers"]))
    if skill.refs:
        click.echo("references: " + ", ".join(sorted(skill.refs)))
    if skill.instr:
        click.echo("---\n" + skill.instr)


@skills.command("add")
@click.argument("path", type=click.Path(exists=True, file_okay=False))
@click.option("--user", "user_id", required=True)
@click.pass_context
def skills_add(ctx, path, user_id):
    """Install the skill directory PATH (containing SKILL.md) for a user."""
    skill = parse_skill(Path(path))
    store = _user_store(ctx, user_id)
    write_skill(skill, store.root / skill.name)
    store.reload()
    click.echo(f"installed {skill.name}")


@skills.command("rm")
@click.argument("name")
@click.option("--user", "user_id", required=True)
@click.pass_context
def skills_rm(ctx, name, user_id):
    _user_store(ctx, user_id).delete(name)
    click.echo(f"removed {name}")


# -- memory ----------------------------------------------------------------

@cli.group()
def memory():
    """Inspect the three-layer memory workspace."""


@memory.command("show")
@click.option("--user", "user_id", required=True)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
def memory_show(ctx, user_id, as_json):
    config = _load(ctx)
    ws = init_workspace(Path(config.data_root), user_id)
    data = {
        "user_id": user_id,
        "soul": ws.soul(),
        "user_profile": ws.user_profile(),
        "memory": ws.memory(),
    }
    if as_json:
        click.echo(json.dumps(data, ensure_ascii=False))
        return
    for label, key in (("SOUL", "soul"), ("USER", "user_profile"), ("MEMORY", "memory")):
        click.echo(f"===== {label} =====")
        click.echo(data[key])


# -- evolution -------------------------------------------------------------

@cli.command()
@click.argument("session_id")
@click.option("--user", "user_id", required=True)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
def evolve(ctx, session_id, user_id, as_json):
    """Run the offline evolution pass over an ended session's log."""
    config = _load(ctx)
    ws = init_workspace(Path(config.data_root), user_id)
    store = load_store(ws.root)
    chat_provider, embed_provider = build_providers(config)
    log_path = ws.sessions_dir / f"{session_id}.jsonl"
    if not log_path.is_file():
        raise click.UsageError(f"no session log {log_path}")
    _, artifact = run_evolution(
        workspace=ws,
        store=store,
        session_id=session_id,
        log_path=log_path,
        chat_provider=chat_provider,
        embed_provider=embed_provider,
        dedup_threshold=config.dedup_threshold,
        suggestion_threshold=config.suggestion_threshold,
        weights=config.weights,
        norm_chars=config.norm_chars,
        max_steps=config.max_steps,
    )
    _emit(artifact, as_json,
          f"evolved session {session_id}: "
          f"{len(artifact.get('installed_skills', []))} skills installed, "
          f"{len(artifact.get('applied', {}).get('profile_sections', []))} profile sections")


# -- replay ----------------------------------------------------------------

@cli.command()
@click.argument("log_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--json", "as_json", is_flag=True)
def replay(log_path, as_json):
    """Verify a session log by re-deriving its recorded final state."""
    report = verify_log(log_path)
    _emit(report.to_dict(), as_json,
          f"replayed {report.turns} turns, {report.compressions} compressions: "
          + ("consistent" if report.ok else f"{len(report.divergences)} divergences"))
    if not as_json and not report.ok:
        for divergence in report.divergences:
            click.echo(f"  {divergence}")
    if not report.ok:
        raise VerificationFailure("replay divergences found")


# -- soak ------------------------------------------------------------------

@cli.command()
@click.option("--turns", type=int, default=420, show_default=True)
@click.option("--budget", type=int, default=64000, show_default=True,
              help="context budget in tokens")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--user", "user_id", default="soak", show_default=True)
@click.option("--json", "as_json", is_flag=True)
@click.pass_context
def soak(ctx, turns, budget, seed, user_id, as_json):
    """Run a long deterministic mock-provider session and report on it."""
    config = _load(ctx)
    report = run_soak(
        Path(config.data_root),
        turns=turns,
        max_tokens=budget,
        retain_recent=config.retain_recent,
        seed=seed,
        user_id=user_id,
    )
    data = report.to_dict()
    lines = [
        f"turns: {data['turns_completed']}/{data['turns_requested']}",
        f"compressions: {data['compressions']}",
        f"errors: {len(data['errors'])}",
        f"max token estimate: {data['max_token_estimate']}",
        f"elapsed: {data['elapsed_seconds']}s",
    ]
    for name, info in data["skill_maturity"].items():
        lines.append(
            f"  {name}: {info['maturity']} "
            f"({info['success_count']}/{info['usage_count']})"
        )
    _emit(data, as_json, "\n".join(lines))
    if report.errors:
        raise HarnessError(f"soak hit {len(report.errors)} errors")
    if report.missing_skill_assets:
        raise VerificationFailure(
            f"skill assets lost in compression: {report.missing_skill_assets}"
        )


# -- serve -----------------------------------------------------------------

@cli.command()
@click.option("--host", default=None, help="override config bind host")
@click.option("--port", type=int, default=None, help="override config bind port")
@click.pass_context
def serve(ctx, host, port):
    """Host the HTTP service in-process."""
    import uvicorn

    from .service import create_app

    config = _load(ctx)
    app = create_app(config)
    uvicorn.run(app, host=host or config.host, port=port or config.port)


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.UsageError as exc:
        click.echo(f"usage error: {exc.format_message()}", err=True)
        return EXIT_USAGE
    except click.Abort:
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except VerificationFailure as exc:
        click.echo(f"verification failed: {exc}", err=True)
        return EXIT_VERIFICATION
    except ReplayError as exc:
        location = f" (line {exc.line_number})" if exc.line_number else ""
        click.echo(f"runtime error: {exc}{location}", err=True)
        return EXIT_RUNTIME
    except HarnessError as exc:
        click.echo(f"runtime error: {exc}", err=True)
        return EXIT_RUNTIME
    except OSError as exc:
        click.echo(f"runtime error: {exc}", err=True)
        return EXIT_RUNTIME
    return 0


if __name__ == "__main__":
    sys.exit(main())
