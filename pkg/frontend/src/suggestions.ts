import type { ApiClient } from './api.js';
import type { Suggestion } from './types.js';

export interface SuggestionRow {
  suggestion: Suggestion;
  /** Set once a confirm call is in flight or done; the accept and reject
   * buttons are disabled from then on, so a double click cannot produce a
   * second API call against the consume-once endpoint. */
  resolved: boolean;
}

/** Pane model for pending behavior suggestions. */
export class SuggestionsPane {
  rows: SuggestionRow[] = [];
  /** One-shot message for the pane, e.g. when a row vanished under us. */
  notice: string | null = null;

  constructor(
    private readonly api: ApiClient,
    private readonly userId: string
  ) {}

  async refresh(): Promise<void> {
    const pending = await this.api.listSuggestions(this.userId);
    this.rows = pending.map((suggestion) => ({ suggestion, resolved: false }));
    this.notice = null;
  }

  /** Accept or reject one suggestion; returns false if it was already
   * resolved locally (no API call made). On a 404 the row is dropped: the
   * suggestion was consumed elsewhere. */
  async resolve(suggestionId: string, accept: boolean): Promise<boolean> {
    const row = this.rows.find((r) => r.suggestion.id === suggestionId);
    if (!row || row.resolved) return false;
    row.resolved = true;
    try {
      await this.api.confirmSuggestion(suggestionId, this.userId, accept);
    } catch (error) {
      const status = (error as { status?: number }).status;
      if (status !== 404) {
        row.resolved = false; // a transient failure is retryable
        throw error;
      }
      this.notice = 'suggestion was already resolved elsewhere';
    }
    this.rows = this.rows.filter((r) => r.suggestion.id !== suggestionId);
    return true;
  }
}
