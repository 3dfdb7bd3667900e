/** Server payload shapes, verbatim from the ammr HTTP API. */

export interface ItemRecord {
  id: string;
  attrs: Record<string, string>;
  details: string[];
  brand: string;
  price_cents: number;
  tags: string[];
}

export interface ConstraintChip {
  id: string;
  kind: "set" | "remove" | "negate" | "add_soft";
  slot: string;
  value: string;
  label: string;
}

export interface RefineResult {
  item_id: string;
  score: number;
  satisfied: string[];
  violated: string[];
  rationale: string;
  item: ItemRecord;
}

export interface TraceStep {
  phase: "thought" | "action" | "critic" | "speak";
  payload: Record<string, unknown>;
  elapsed_us: number;
}

export interface MemoryWeights {
  slot_weights: Record<string, number>;
  value_multipliers: Record<string, number>;
}

export interface RefineResponse {
  results: RefineResult[];
  explanation: string;
  constraints: ConstraintChip[];
  trace: TraceStep[];
  memory_weights: MemoryWeights;
  timings: { total_us: number };
}

export interface MemoryResponse extends MemoryWeights {
  session_id: string;
  counts: { slot: string; value: string; accept: number; reject: number }[];
  recent_tokens: string[];
}

export interface ItemsPage {
  items: ItemRecord[];
  offset: number;
  total: number;
}
