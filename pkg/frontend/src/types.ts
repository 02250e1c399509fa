/** Wire types mirrored from the service API. Every field here comes off a
 * JSON response or SSE event; the console adds nothing of its own. */

export type MatchStage = 'keyword' | 'embedding' | 'llm';

export interface MatchResultEvent {
  type: 'match_result';
  skill: string | null;
  match_type: MatchStage | null;
  confidence: number | null;
  degraded?: boolean;
}

export interface DeltaEvent {
  type: 'delta';
  text: string;
}

export interface ToolStartedEvent {
  type: 'tool_started';
  tool: string;
  call_id: string;
}

export interface ToolFinishedEvent {
  type: 'tool_finished';
  tool: string;
  call_id: string;
  error: boolean;
}

export interface CompressionEvent {
  type: 'compression';
  level: number;
  tokens_before: number;
  tokens_after: number;
  asset_count?: number;
}

export interface ErrorEvent {
  type: 'error';
  message: string;
}

export interface TurnSummaryEvent {
  type: 'turn_summary';
  turn_index: number;
  skill_used: string | null;
  success: boolean;
  token_estimate: number;
  tool_errors: string[];
  compression_level: number;
}

export type HarnessEvent =
  | MatchResultEvent
  | DeltaEvent
  | ToolStartedEvent
  | ToolFinishedEvent
  | CompressionEvent
  | ErrorEvent
  | TurnSummaryEvent;

export type MaturityLabel = 'Budding' | 'Growing' | 'Mature' | 'Proficient';

export interface SkillSummary {
  name: string;
  description: string;
  triggers: string[];
  maturity: MaturityLabel;
  usage_count: number;
  success_count: number;
  success_rate: number;
  requires_sub_agent: boolean;
}

export interface MemoryDocs {
  user_id: string;
  user_profile: string;
  memory: string;
}

export interface Suggestion {
  id: string;
  heading: string;
  fragment: string;
  sessions: string[];
  created_at: string;
}

export interface RewardRecord {
  session_id: string;
  maturity_term: number;
  profile_term: number;
  memory_term: number;
  weights: number[];
  reward: number;
}

export interface RewardsResponse {
  records: RewardRecord[];
  gamma: number;
  cumulative: number;
}

export interface SessionInfo {
  session_id: string;
  user_id: string;
  phase: 'open' | 'ended' | 'evolved';
}
