import type { HarnessEvent, MatchStage } from './types.js';

/** One rendered row of the session pane, in stream order. */
export type TranscriptEntry =
  | { kind: 'user'; text: string; turn: number }
  | { kind: 'badge'; label: string; stage: MatchStage; confidence: number; turn: number }
  | { kind: 'assistant'; text: string; turn: number }
  | { kind: 'tool'; tool: string; callId: string; status: 'running' | 'ok' | 'error'; turn: number }
  | { kind: 'divider'; label: string; level: number; turn: number }
  | { kind: 'notice'; text: string; turn: number };

export interface TurnState {
  turn: number;
  confirmed: boolean;
  success: boolean | null; // null until the turn_summary arrives
  failed: boolean;
  skillUsed: string | null;
  turnIndex: number | null; // the server's index, for feedback calls
}

export function formatMatchBadge(stage: MatchStage, confidence: number): string {
  return `${stage} · ${confidence.toFixed(2)}`;
}

/** Pure reducer from the SSE event stream to rendered transcript rows.
 *
 * Entries appear in exactly the order their events arrived; consecutive
 * delta events extend the assistant bubble opened by the first of them, so
 * order fidelity holds per event even though text accumulates. A turn stays
 * unconfirmed until its turn_summary event lands.
 */
export class TranscriptModel {
  readonly entries: TranscriptEntry[] = [];
  readonly turns: TurnState[] = [];
  private turnCounter = -1;
  private openAssistant: { kind: 'assistant'; text: string; turn: number } | null = null;

  get currentTurn(): TurnState | null {
    return this.turns.length ? this.turns[this.turns.length - 1] : null;
  }

  /** Record the user's message and open a new unconfirmed turn. */
  beginTurn(userText: string): TurnState {
    this.turnCounter += 1;
    this.openAssistant = null;
    const state: TurnState = {
      turn: this.turnCounter,
      confirmed: false,
      success: null,
      failed: false,
      skillUsed: null,
      turnIndex: null,
    };
    this.turns.push(state);
    this.entries.push({ kind: 'user', text: userText, turn: this.turnCounter });
    return state;
  }

  apply(event: HarnessEvent): void {
    const turn = this.turnCounter;
    const state = this.currentTurn;
    switch (event.type) {
      case 'match_result': {
        if (event.skill && event.match_type && event.confidence !== null) {
          this.entries.push({
            kind: 'badge',
            label: formatMatchBadge(event.match_type, event.confidence),
            stage: event.match_type,
            confidence: event.confidence,
            turn,
          });
        }
        break;
      }
      case 'delta': {
        if (this.openAssistant === null) {
          this.openAssistant = { kind: 'assistant', text: '', turn };
          this.entries.push(this.openAssistant);
        }
        this.openAssistant.text += event.text;
        break;
      }
      case 'tool_started': {
        this.openAssistant = null; // the next delta starts a fresh bubble
        this.entries.push({
          kind: 'tool',
          tool: event.tool,
          callId: event.call_id,
          status: 'running',
          turn,
        });
        break;
      }
      case 'tool_finished': {
        for (let i = this.entries.length - 1; i >= 0; i -= 1) {
          const entry = this.entries[i];
          if (entry.kind === 'tool' && entry.callId === event.call_id) {
            entry.status = event.error ? 'error' : 'ok';
            break;
          }
        }
        break;
      }
      case 'compression': {
        const assets = event.asset_count;
        const suffix = assets === undefined ? '' : `, ${assets} assets carried`;
        this.entries.push({
          kind: 'divider',
          label: `context compressed (level ${event.level})${suffix}`,
          level: event.level,
          turn,
        });
        break;
      }
      case 'error': {
        this.entries.push({ kind: 'notice', text: event.message, turn });
        if (state) state.failed = true;
        break;
      }
      case 'turn_summary': {
        if (state) {
          state.confirmed = true;
          state.success = event.success;
          state.failed = state.failed || !event.success;
          state.skillUsed = event.skill_used;
          state.turnIndex = event.turn_index;
        }
        this.openAssistant = null;
        break;
      }
    }
  }

  /** Feed a whole recorded stream into the current turn. */
  applyAll(events: Iterable<HarnessEvent>): void {
    for (const event of events) this.apply(event);
  }
}
