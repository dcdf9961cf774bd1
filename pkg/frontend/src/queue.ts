import { STAGE_ORDER, type ItemSummary, type Stage } from "./types";

export interface QueueGroup {
  stage: Stage;
  needsVerdict: boolean;
  items: ItemSummary[];
}

/**
 * Group items by stage for the queue pane.
 *
 * Items needing a verdict always come first (including re-verification
 * verdicts, whose stage stays Reverifying); remaining groups follow the
 * pipeline's working order. Order within a group is id-stable.
 */
export function orderQueue(items: ItemSummary[]): QueueGroup[] {
  const byId = [...items].sort((a, b) => a.id.localeCompare(b.id));
  const awaiting = byId.filter((item) => item.needs_verdict);
  const groups: QueueGroup[] = [];
  if (awaiting.length > 0) {
    groups.push({ stage: "AwaitingVerdict", needsVerdict: true, items: awaiting });
  }
  for (const stage of STAGE_ORDER) {
    const group = byId.filter((item) => item.stage === stage && !item.needs_verdict);
    if (group.length > 0) groups.push({ stage, needsVerdict: false, items: group });
  }
  return groups;
}
