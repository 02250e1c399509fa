import type { MaturityLabel, SkillSummary } from './types.js';

const MATURITY_ORDER: Record<MaturityLabel, number> = {
  Proficient: 3,
  Mature: 2,
  Growing: 1,
  Budding: 0,
};

export const MATURITY_COLOR: Record<MaturityLabel, string> = {
  Proficient: 'badge-proficient',
  Mature: 'badge-mature',
  Growing: 'badge-growing',
  Budding: 'badge-budding',
};

export interface SkillRow {
  name: string;
  maturity: MaturityLabel;
  badgeClass: string;
  usageCount: number;
  successRate: string; // rendered as e.g. "0.90"
  requiresSubAgent: boolean;
}

/** Rows for the maturity dashboard: maturity descending, then name. */
export function skillRows(skills: SkillSummary[]): SkillRow[] {
  return [...skills]
    .sort((a, b) => {
      const byMaturity = MATURITY_ORDER[b.maturity] - MATURITY_ORDER[a.maturity];
      return byMaturity !== 0 ? byMaturity : a.name.localeCompare(b.name);
    })
    .map((skill) => ({
      name: skill.name,
      maturity: skill.maturity,
      badgeClass: MATURITY_COLOR[skill.maturity],
      usageCount: skill.usage_count,
      successRate: skill.success_rate.toFixed(2),
      requiresSubAgent: skill.requires_sub_agent,
    }));
}

export function isEmptyState(skills: SkillSummary[]): boolean {
  return skills.length === 0;
}
