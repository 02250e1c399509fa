import { readFileSync } from 'node:fs';
import { describe, expect, it } from 'vitest';
import { parseRecordedStream } from '../src/sse.js';
import { TranscriptModel, formatMatchBadge } from '../src/transcript.js';
import type { HarnessEvent } from '../src/types.js';

function load(name: string): HarnessEvent[] {
  const text = readFileSync(new URL(`./fixtures/${name}`, import.meta.url), 'utf8');
  return parseRecordedStream(text);
}

/** The entry kinds a stream should render, in stream order. Consecutive
 * deltas share one assistant bubble; tool_finished and turn_summary mutate
 * earlier rows instead of appending. */
function expectedKinds(events: HarnessEvent[]): string[] {
  const kinds: string[] = ['user'];
  let bubbleOpen = false;
  for (const event of events) {
    switch (event.type) {
      case 'match_result':
        if (event.skill !== null) kinds.push('badge');
        break;
      case 'delta':
        if (!bubbleOpen) {
          kinds.push('assistant');
          bubbleOpen = true;
        }
        break;
      case 'tool_started':
        kinds.push('tool');
        bubbleOpen = false;
        break;
      case 'compression':
        kinds.push('divider');
        break;
      case 'error':
        kinds.push('notice');
        break;
    }
  }
  return kinds;
}

function play(name: string, userText: string): TranscriptModel {
  const model = new TranscriptModel();
  model.beginTurn(userText);
  model.applyAll(load(name));
  return model;
}

describe('TranscriptModel against recorded streams', () => {
  it('renders the keyword stream in stream order with a match badge', () => {
    const events = load('stream-keyword.txt');
    const model = play('stream-keyword.txt', 'I need a quotation for 500 solar inverters');
    expect(model.entries.map((e) => e.kind)).toEqual(expectedKinds(events));
    const badge = model.entries[1];
    expect(badge).toMatchObject({
      kind: 'badge',
      label: 'keyword · 1.00',
      stage: 'keyword',
      confidence: 1.0,
    });
  });

  it('accumulates every delta into the assistant bubble', () => {
    const events = load('stream-keyword.txt');
    const expectedText = events
      .filter((e) => e.type === 'delta')
      .map((e) => (e.type === 'delta' ? e.text : ''))
      .join('');
    const model = play('stream-keyword.txt', 'hi');
    const bubble = model.entries.find((e) => e.kind === 'assistant');
    expect(bubble && bubble.kind === 'assistant' ? bubble.text : '').toBe(expectedText);
  });

  it('confirms the turn from turn_summary with the server turn index', () => {
    const events = load('stream-keyword.txt');
    const summary = events[events.length - 1];
    if (summary.type !== 'turn_summary') throw new Error('fixture ends oddly');
    const model = play('stream-keyword.txt', 'hi');
    expect(model.currentTurn).toMatchObject({
      confirmed: true,
      success: true,
      failed: false,
      skillUsed: 'quotation-email',
      turnIndex: summary.turn_index,
    });
  });

  it('renders the compression divider at its stream position', () => {
    const events = load('stream-compression.txt');
    const model = play('stream-compression.txt', 'hi');
    expect(model.entries.map((e) => e.kind)).toEqual(expectedKinds(events));
    const divider = model.entries.find((e) => e.kind === 'divider');
    expect(divider).toMatchObject({
      kind: 'divider',
      label: 'context compressed (level 1)',
      level: 1,
    });
    const dividerAt = model.entries.findIndex((e) => e.kind === 'divider');
    expect(dividerAt).toBe(expectedKinds(events).indexOf('divider'));
  });

  it('tracks the tool-error stream: no badge, failed turn, notice row', () => {
    const events = load('stream-tool-error.txt');
    const model = new TranscriptModel();
    model.beginTurn('update my profile');

    // the null-skill match_result renders nothing
    model.apply(events[0]);
    expect(model.entries).toHaveLength(1);

    model.apply(events[1]); // tool_started
    const tool = model.entries[1];
    expect(tool).toMatchObject({ kind: 'tool', tool: 'update_user_profile', status: 'running' });

    model.apply(events[2]); // tool_finished, error: false
    expect(tool).toMatchObject({ status: 'ok' });

    model.apply(events[3]); // error event
    expect(model.entries[2]).toMatchObject({ kind: 'notice', text: 'scripted transcript exhausted' });
    expect(model.currentTurn).toMatchObject({ confirmed: false, failed: true });

    model.apply(events[4]); // turn_summary
    expect(model.currentTurn).toMatchObject({ confirmed: true, success: false, failed: true });
  });
});

describe('TranscriptModel unit behavior', () => {
  const delta = (text: string): HarnessEvent => ({ type: 'delta', text });

  it('closes the bubble on tool_started and reopens on the next delta', () => {
    const model = new TranscriptModel();
    model.beginTurn('go');
    model.applyAll([
      delta('before '),
      delta('tool'),
      { type: 'tool_started', tool: 'web-search', call_id: 'c1' },
      { type: 'tool_finished', tool: 'web-search', call_id: 'c1', error: true },
      delta('after'),
    ]);
    expect(model.entries.map((e) => e.kind)).toEqual(['user', 'assistant', 'tool', 'assistant']);
    const [, first, tool, second] = model.entries;
    expect(first).toMatchObject({ kind: 'assistant', text: 'before tool' });
    expect(tool).toMatchObject({ kind: 'tool', status: 'error' });
    expect(second).toMatchObject({ kind: 'assistant', text: 'after' });
  });

  it('matches tool_finished to the right call when several run', () => {
    const model = new TranscriptModel();
    model.beginTurn('go');
    model.applyAll([
      { type: 'tool_started', tool: 'a', call_id: 'c1' },
      { type: 'tool_started', tool: 'b', call_id: 'c2' },
      { type: 'tool_finished', tool: 'a', call_id: 'c1', error: true },
    ]);
    const [, first, second] = model.entries;
    expect(first).toMatchObject({ callId: 'c1', status: 'error' });
    expect(second).toMatchObject({ callId: 'c2', status: 'running' });
  });

  it('keeps turns independent across beginTurn calls', () => {
    const model = new TranscriptModel();
    model.beginTurn('one');
    model.applyAll([
      delta('first answer'),
      {
        type: 'turn_summary',
        turn_index: 0,
        skill_used: null,
        success: true,
        token_estimate: 10,
        tool_errors: [],
        compression_level: 0,
      },
    ]);
    model.beginTurn('two');
    model.apply(delta('second answer'));
    expect(model.turns).toHaveLength(2);
    expect(model.turns[0]).toMatchObject({ confirmed: true, success: true });
    expect(model.turns[1]).toMatchObject({ confirmed: false, success: null });
    const bubbles = model.entries.filter((e) => e.kind === 'assistant');
    expect(bubbles.map((e) => (e.kind === 'assistant' ? e.turn : -1))).toEqual([0, 1]);
  });

  it('formats badges as stage dot confidence', () => {
    expect(formatMatchBadge('keyword', 1.0)).toBe('keyword · 1.00');
    expect(formatMatchBadge('embedding', 0.6)).toBe('embedding · 0.60');
    expect(formatMatchBadge('llm', 0.7)).toBe('llm · 0.70');
  });
});
