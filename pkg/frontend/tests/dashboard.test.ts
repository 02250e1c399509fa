import { describe, expect, it } from 'vitest';
import { isEmptyState, skillRows } from '../src/dashboard.js';
import type { SkillSummary } from '../src/types.js';

function skill(partial: Partial<SkillSummary> & { name: string }): SkillSummary {
  return {
    description: 'does a thing',
    triggers: ['thing'],
    maturity: 'Budding',
    usage_count: 0,
    success_count: 0,
    success_rate: 1.0,
    requires_sub_agent: false,
    ...partial,
  };
}

describe('skillRows', () => {
  it('orders by maturity descending, then name', () => {
    const rows = skillRows([
      skill({ name: 'zeta', maturity: 'Mature' }),
      skill({ name: 'alpha', maturity: 'Budding' }),
      skill({ name: 'midway', maturity: 'Proficient' }),
      skill({ name: 'beta', maturity: 'Mature' }),
      skill({ name: 'gamma', maturity: 'Growing' }),
    ]);
    expect(rows.map((r) => r.name)).toEqual(['midway', 'beta', 'zeta', 'gamma', 'alpha']);
  });

  it('does not mutate its input', () => {
    const skills = [skill({ name: 'b' }), skill({ name: 'a' })];
    skillRows(skills);
    expect(skills.map((s) => s.name)).toEqual(['b', 'a']);
  });

  it('maps maturity labels to badge classes', () => {
    const rows = skillRows([
      skill({ name: 'p', maturity: 'Proficient' }),
      skill({ name: 'm', maturity: 'Mature' }),
      skill({ name: 'g', maturity: 'Growing' }),
      skill({ name: 'b', maturity: 'Budding' }),
    ]);
    expect(Object.fromEntries(rows.map((r) => [r.maturity, r.badgeClass]))).toEqual({
      Proficient: 'badge-proficient',
      Mature: 'badge-mature',
      Growing: 'badge-growing',
      Budding: 'badge-budding',
    });
  });

  it('renders the success rate with two decimals', () => {
    const [row] = skillRows([skill({ name: 'x', success_rate: 2 / 3 })]);
    expect(row.successRate).toBe('0.67');
  });

  it('reflects a usage bump on re-render', () => {
    const before = skillRows([skill({ name: 'x', usage_count: 3 })]);
    const after = skillRows([skill({ name: 'x', usage_count: 4, maturity: 'Growing' })]);
    expect(before[0].usageCount).toBe(3);
    expect(after[0]).toMatchObject({ usageCount: 4, maturity: 'Growing' });
  });

  it('carries the sub-agent flag through', () => {
    const [row] = skillRows([skill({ name: 'x', requires_sub_agent: true })]);
    expect(row.requiresSubAgent).toBe(true);
  });
});

describe('isEmptyState', () => {
  it('is true only for an empty list', () => {
    expect(isEmptyState([])).toBe(true);
    expect(isEmptyState([skill({ name: 'x' })])).toBe(false);
  });
});
