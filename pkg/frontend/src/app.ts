import { ApiClient } from './api.js';
import { isEmptyState, skillRows } from './dashboard.js';
import { SuggestionsPane } from './suggestions.js';
import { TranscriptModel } from './transcript.js';
import type { TranscriptEntry } from './transcript.js';

const SKILL_POLL_MS = 5000;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function renderEntry(entry: TranscriptEntry): HTMLElement {
  switch (entry.kind) {
    case 'user':
      return el('div', 'row row-user', entry.text);
    case 'assistant':
      return el('div', 'row row-assistant', entry.text);
    case 'badge':
      return el('span', `chip chip-${entry.stage}`, entry.label);
    case 'tool':
      return el('span', `chip chip-tool chip-${entry.status}`, `${entry.tool} (${entry.status})`);
    case 'divider':
      return el('div', 'divider', entry.label);
    case 'notice':
      return el('div', 'row row-error', entry.text);
  }
}

class ConsoleApp {
  private readonly api = new ApiClient('');
  private readonly transcript = new TranscriptModel();
  private readonly ratedTurns = new Set<number>();
  private suggestions: SuggestionsPane | null = null;
  private sessionId: string | null = null;
  private userId = '';

  constructor(private readonly root: HTMLElement) {}

  mount(): void {
    this.root.innerHTML = '';
    const form = el('form', 'connect');
    const userInput = el('input');
    userInput.placeholder = 'user id';
    const connect = el('button', undefined, 'open session');
    form.append(userInput, connect);
    form.addEventListener('submit', (event) => {
      event.preventDefault();
      if (userInput.value.trim()) void this.openSession(userInput.value.trim());
    });

    this.root.append(
      form,
      el('section', 'pane pane-session'),
      el('section', 'pane pane-skills'),
      el('section', 'pane pane-memory'),
      el('section', 'pane pane-suggestions')
    );
  }

  private pane(name: string): HTMLElement {
    return this.root.querySelector(`.pane-${name}`) as HTMLElement;
  }

  private async openSession(userId: string): Promise<void> {
    this.userId = userId;
    const session = await this.api.createSession(userId);
    this.sessionId = session.session_id;
    this.suggestions = new SuggestionsPane(this.api, userId);
    this.renderChatControls();
    await Promise.all([this.refreshSkills(), this.refreshMemory(), this.refreshSuggestions()]);
    window.setInterval(() => void this.refreshSkills(), SKILL_POLL_MS);
  }

  private renderChatControls(): void {
    const pane = this.pane('session');
    pane.innerHTML = '';
    const log = el('div', 'transcript');
    const form = el('form', 'composer');
    const input = el('input');
    input.placeholder = 'message';
    const send = el('button', undefined, 'send');
    form.append(input, send);
    form.addEventListener('submit', (event) => {
      event.preventDefault();
      const text = input.value.trim();
      if (!text || !this.sessionId) return;
      input.value = '';
      void this.sendMessage(text, log);
    });
    pane.append(log, form);
  }

  private async sendMessage(text: string, log: HTMLElement): Promise<void> {
    if (!this.sessionId) return;
    this.transcript.beginTurn(text);
    this.redraw(log);
    try {
      for await (const event of this.api.streamMessage(this.sessionId, text)) {
        this.transcript.apply(event);
        this.redraw(log);
      }
    } catch {
      const banner = el('div', 'row row-error', 'stream dropped; reconnect to continue');
      log.append(banner);
    }
    await this.refreshSkills();
  }

  private redraw(log: HTMLElement): void {
    log.innerHTML = '';
    for (const entry of this.transcript.entries) log.append(renderEntry(entry));
    const turn = this.transcript.currentTurn;
    if (turn && !turn.confirmed) {
      log.append(el('div', 'row row-pending', '…'));
    }
    if (turn && turn.confirmed && turn.turnIndex !== null) {
      this.renderFeedback(log, turn.turnIndex);
    }
    log.scrollTop = log.scrollHeight;
  }

  /** Thumbs for the latest completed turn; one rating per turn. */
  private renderFeedback(log: HTMLElement, turnIndex: number): void {
    if (this.ratedTurns.has(turnIndex)) return;
    const controls = el('div', 'row row-feedback');
    for (const [label, positive] of [
      ['helpful', true],
      ['unhelpful', false],
    ] as const) {
      const button = el('button', undefined, label);
      button.addEventListener('click', () => {
        button.disabled = true;
        if (!this.sessionId) return;
        void this.api.sendFeedback(this.sessionId, turnIndex, positive).then(() => {
          this.ratedTurns.add(turnIndex);
          this.redraw(log);
          return this.refreshSkills();
        });
      });
      controls.append(button);
    }
    log.append(controls);
  }

  private async refreshSkills(): Promise<void> {
    if (!this.userId) return;
    const pane = this.pane('skills');
    try {
      const skills = await this.api.listSkills(this.userId);
      pane.innerHTML = '';
      pane.append(el('h2', undefined, 'skills'));
      if (isEmptyState(skills)) {
        pane.append(el('p', 'empty', 'no skills yet'));
        return;
      }
      const table = el('table');
      for (const row of skillRows(skills)) {
        const tr = el('tr');
        tr.append(
          el('td', undefined, row.name),
          el('td', `badge ${row.badgeClass}`, row.maturity),
          el('td', undefined, `uses ${row.usageCount}`),
          el('td', undefined, `rate ${row.successRate}`)
        );
        table.append(tr);
      }
      pane.append(table);
    } catch {
      pane.append(el('p', 'stale', 'service unreachable; showing stale data'));
    }
  }

  private async refreshMemory(): Promise<void> {
    const pane = this.pane('memory');
    const docs = await this.api.getMemory(this.userId);
    pane.innerHTML = '';
    pane.append(el('h2', undefined, 'memory'));
    // textContent keeps the Markdown inert: rendered as text, never as HTML.
    const profile = el('pre', 'doc');
    profile.textContent = docs.user_profile;
    const memory = el('pre', 'doc');
    memory.textContent = docs.memory;
    pane.append(profile, memory);
  }

  private async refreshSuggestions(): Promise<void> {
    if (!this.suggestions) return;
    const pane = this.pane('suggestions');
    const notice = this.suggestions.notice;
    await this.suggestions.refresh();
    pane.innerHTML = '';
    pane.append(el('h2', undefined, 'suggestions'));
    if (notice) pane.append(el('p', 'notice', notice));
    for (const row of this.suggestions.rows) {
      const item = el('div', 'suggestion');
      item.append(el('span', undefined, `${row.suggestion.heading}: ${row.suggestion.fragment}`));
      for (const [label, accept] of [
        ['accept', true],
        ['reject', false],
      ] as const) {
        const button = el('button', undefined, label);
        button.addEventListener('click', () => {
          button.disabled = true;
          void this.suggestions
            ?.resolve(row.suggestion.id, accept)
            .then(() => Promise.all([this.refreshSuggestions(), this.refreshMemory()]));
        });
        item.append(button);
      }
      pane.append(item);
    }
    if (!this.suggestions.rows.length) pane.append(el('p', 'empty', 'nothing pending'));
  }
}

if (typeof document !== 'undefined') {
  const root = document.getElementById('app');
  if (root) new ConsoleApp(root).mount();
}

export { ConsoleApp };
