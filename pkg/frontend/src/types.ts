// Payload shapes of the pipeline service API (/api/v1). The console renders
// these verbatim; it never rewrites code or reports client-side.

export type Stage =
  | "QAGen"
  | "CodeGen"
  | "Correcting"
  | "AwaitingVerdict"
  | "Improving"
  | "Splitting"
  | "Reverifying"
  | "Done"
  | "Failed";

export const STAGE_ORDER: Stage[] = [
  "AwaitingVerdict",
  "Improving",
  "Correcting",
  "CodeGen",
  "QAGen",
  "Splitting",
  "Reverifying",
  "Done",
  "Failed",
];

export const DRIFT_CATEGORIES = [
  "NotationalCollapse",
  "AbstractionElevation",
  "ProofStrategySubstitution",
  "ImplicitPremiseSelection",
] as const;

export type DriftCategory = (typeof DRIFT_CATEGORIES)[number];

export interface DriftLabel {
  category: DriftCategory;
  annotator: string;
}

export interface ItemSummary {
  id: string;
  stage: Stage;
  k: number;
  patience: number;
  needs_verdict: boolean;
  status: string;
  field: string;
  note: string;
}

export interface CompileSummary {
  failed: boolean;
  error_text: string;
  category: string | null;
}

export interface ItemDetail extends ItemSummary {
  question: string;
  answer: string;
  code: string;
  compile: CompileSummary | null;
  report: string;
  drift: DriftLabel[];
}

export interface ItemEvent {
  id: number;
  type: string;
  data: Record<string, unknown>;
}

export interface VerdictAck {
  accepted: boolean;
  key: string;
  aligned: number;
}
