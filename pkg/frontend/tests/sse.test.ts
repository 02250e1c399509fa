import { readFileSync } from 'node:fs';
import { describe, expect, it } from 'vitest';
import { SseParser, parseRecordedStream } from '../src/sse.js';
import type { HarnessEvent } from '../src/types.js';

const FIXTURES = ['stream-keyword.txt', 'stream-compression.txt', 'stream-tool-error.txt'];

function fixture(name: string): string {
  return readFileSync(new URL(`./fixtures/${name}`, import.meta.url), 'utf8');
}

/** Event names in raw stream order, straight off the wire text. */
function wireOrder(text: string): string[] {
  return [...text.matchAll(/^event: (\S+)$/gm)].map((m) => m[1]);
}

describe('parseRecordedStream', () => {
  it.each(FIXTURES)('preserves wire order for %s', (name) => {
    const text = fixture(name);
    const events = parseRecordedStream(text);
    expect(events.map((e) => e.type)).toEqual(wireOrder(text));
  });

  it('reads the keyword stream end to end', () => {
    const events = parseRecordedStream(fixture('stream-keyword.txt'));
    expect(events).toHaveLength(9);
    expect(events[0]).toMatchObject({
      type: 'match_result',
      skill: 'quotation-email',
      match_type: 'keyword',
      confidence: 1.0,
      degraded: false,
    });
    expect(events[events.length - 1].type).toBe('turn_summary');
  });

  it('reads the compression stream with its divider event', () => {
    const events = parseRecordedStream(fixture('stream-compression.txt'));
    const compression = events.find((e) => e.type === 'compression');
    expect(compression).toMatchObject({ level: 1 });
    if (compression?.type === 'compression') {
      expect(compression.tokens_after).toBeLessThan(compression.tokens_before);
    }
  });

  it('reads the tool-error stream including the failure summary', () => {
    const events = parseRecordedStream(fixture('stream-tool-error.txt'));
    expect(events.map((e) => e.type)).toEqual([
      'match_result',
      'tool_started',
      'tool_finished',
      'error',
      'turn_summary',
    ]);
    const summary = events[events.length - 1];
    expect(summary).toMatchObject({ success: false, skill_used: null });
  });
});

describe('SseParser incremental feeding', () => {
  it.each(FIXTURES)('one char at a time equals one shot for %s', (name) => {
    const text = fixture(name);
    const parser = new SseParser();
    const dribbled: HarnessEvent[] = [];
    for (const char of text) dribbled.push(...parser.feed(char));
    dribbled.push(...parser.end());
    expect(dribbled).toEqual(parseRecordedStream(text));
  });

  it.each([3, 7, 64, 1024])('arbitrary chunk size %d matches', (size) => {
    const text = fixture('stream-keyword.txt');
    const parser = new SseParser();
    const events: HarnessEvent[] = [];
    for (let i = 0; i < text.length; i += size) {
      events.push(...parser.feed(text.slice(i, i + size)));
    }
    events.push(...parser.end());
    expect(events).toEqual(parseRecordedStream(text));
  });

  it('tolerates CRLF line endings', () => {
    const text = fixture('stream-tool-error.txt').replace(/\n/g, '\r\n');
    expect(parseRecordedStream(text).map((e) => e.type)).toEqual(
      wireOrder(fixture('stream-tool-error.txt'))
    );
  });

  it('flushes an unterminated final frame on end()', () => {
    const parser = new SseParser();
    const frame = 'event: delta\ndata: {"type": "delta", "text": "tail"}';
    expect(parser.feed(frame)).toEqual([]);
    expect(parser.end()).toEqual([{ type: 'delta', text: 'tail' }]);
  });

  it('ignores frames without a data line', () => {
    const parser = new SseParser();
    expect(parser.feed('event: ping\n\n')).toEqual([]);
    expect(parser.end()).toEqual([]);
  });

  it('rejects a payload whose type disagrees with the event name', () => {
    expect(() =>
      parseRecordedStream('event: delta\ndata: {"type": "error", "message": "x"}\n\n')
    ).toThrow(/disagrees/);
  });
});
