import type {
  HarnessEvent,
  MemoryDocs,
  RewardsResponse,
  SessionInfo,
  SkillSummary,
  Suggestion,
} from './types.js';
import { streamEvents } from './sse.js';

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin typed client over the service endpoints. Holds no state beyond the
 * base URL; every pane re-derives its content from these calls. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init)
  ) {}

  private async json<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      headers: { 'Content-Type': 'application/json' },
      ...init,
    });
    if (!response.ok) {
      let detail = `HTTP ${response.status}`;
      try {
        const body = (await response.json()) as { detail?: string };
        if (body.detail) detail = `${detail}: ${body.detail}`;
      } catch {
        // non-JSON error body; the status line is all we have
      }
      throw new ApiError(response.status, detail);
    }
    return (await response.json()) as T;
  }

  createSession(userId: string): Promise<SessionInfo> {
    return this.json('/v1/sessions', {
      method: 'POST',
      body: JSON.stringify({ user_id: userId }),
    });
  }

  /** POST a chat message and stream back the turn's events. */
  async *streamMessage(sessionId: string, text: string): AsyncGenerator<HarnessEvent> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/v1/sessions/${sessionId}/messages`,
      {
        method: 'POST',
        headers: { 'Content-Type': 'application/json' },
        body: JSON.stringify({ text }),
      }
    );
    yield* streamEvents(response);
  }

  endSession(sessionId: string): Promise<{ session_id: string; phase: string }> {
    return this.json(`/v1/sessions/${sessionId}/end`, { method: 'POST' });
  }

  evolveSession(sessionId: string): Promise<{ session_id: string; artifact: unknown }> {
    return this.json(`/v1/sessions/${sessionId}/evolve`, { method: 'POST' });
  }

  sendFeedback(
    sessionId: string,
    turnIndex: number,
    positive: boolean
  ): Promise<{ adjustment: number }> {
    return this.json(`/v1/sessions/${sessionId}/feedback`, {
      method: 'POST',
      body: JSON.stringify({ turn_index: turnIndex, positive }),
    });
  }

  async listSkills(userId: string): Promise<SkillSummary[]> {
    const body = await this.json<{ skills: SkillSummary[] }>(
      `/v1/skills?user_id=${encodeURIComponent(userId)}`
    );
    return body.skills;
  }

  getMemory(userId: string): Promise<MemoryDocs> {
    return this.json(`/v1/users/${encodeURIComponent(userId)}/memory`);
  }

  async listSuggestions(userId: string): Promise<Suggestion[]> {
    const body = await this.json<{ suggestions: Suggestion[] }>(
      `/v1/users/${encodeURIComponent(userId)}/suggestions`
    );
    return body.suggestions;
  }

  confirmSuggestion(
    suggestionId: string,
    userId: string,
    accept: boolean
  ): Promise<{ id: string; accepted: boolean; heading: string }> {
    return this.json(`/v1/suggestions/${encodeURIComponent(suggestionId)}/confirm`, {
      method: 'POST',
      body: JSON.stringify({ user_id: userId, accept }),
    });
  }

  getRewards(userId: string): Promise<RewardsResponse> {
    return this.json(`/v1/users/${encodeURIComponent(userId)}/rewards`);
  }
}

export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string
  ) {
    super(message);
    this.name = 'ApiError';
  }
}
