import type { HarnessEvent } from './types.js';

/** Incremental server-sent-events parser.
 *
 * Frames look like:
 *
 *     event: delta
 *     data: {"type": "delta", "text": "..."}
 *
 * separated by a blank line. The parser is byte-boundary agnostic: feeding
 * a recorded stream one character at a time yields the same events as one
 * big chunk, which is exactly what the fixture tests assert.
 */
export class SseParser {
  private buffer = '';

  /** Consume a chunk, returning every complete event it closed. */
  feed(chunk: string): HarnessEvent[] {
    this.buffer += chunk;
    const events: HarnessEvent[] = [];
    let boundary: number;
    while ((boundary = this.buffer.search(/\r?\n\r?\n/)) !== -1) {
      const frame = this.buffer.slice(0, boundary);
      this.buffer = this.buffer.slice(boundary).replace(/^\r?\n\r?\n/, '');
      const parsed = parseFrame(frame);
      if (parsed !== null) events.push(parsed);
    }
    return events;
  }

  /** Flush a final unterminated frame, if the stream ended mid-event. */
  end(): HarnessEvent[] {
    const rest = this.buffer;
    this.buffer = '';
    const parsed = rest.trim() ? parseFrame(rest) : null;
    return parsed === null ? [] : [parsed];
  }
}

function parseFrame(frame: string): HarnessEvent | null {
  let eventName = 'message';
  const dataLines: string[] = [];
  for (const rawLine of frame.split(/\r?\n/)) {
    const line = rawLine.replace(/\r$/, '');
    if (line.startsWith('event:')) {
      eventName = line.slice(6).trim();
    } else if (line.startsWith('data:')) {
      dataLines.push(line.slice(5).replace(/^ /, ''));
    }
  }
  if (dataLines.length === 0) return null;
  const data = JSON.parse(dataLines.join('\n')) as HarnessEvent;
  if (data.type !== eventName) {
    throw new Error(`SSE event name ${eventName} disagrees with payload type ${data.type}`);
  }
  return data;
}

/** Parse a fully recorded stream in one go. */
export function parseRecordedStream(text: string): HarnessEvent[] {
  const parser = new SseParser();
  return [...parser.feed(text), ...parser.end()];
}

/** Drive a fetch() response body through the parser. */
export async function* streamEvents(
  response: Response
): AsyncGenerator<HarnessEvent, void, void> {
  if (!response.ok) throw new Error(`HTTP ${response.status}`);
  if (!response.body) throw new Error('response has no body');
  const reader = response.body.getReader();
  const decoder = new TextDecoder('utf-8');
  const parser = new SseParser();
  for (;;) {
    const { value, done } = await reader.read();
    if (done) break;
    for (const event of parser.feed(decoder.decode(value, { stream: true }))) {
      yield event;
    }
  }
  for (const event of parser.end()) yield event;
}
