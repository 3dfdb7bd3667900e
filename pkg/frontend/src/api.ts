/** Thin client over the service endpoints; resolves JSON or throws a typed
 * error (ApiError for 4xx/5xx bodies, plain Error for network failures). */

import type { ItemsPage, MemoryResponse, RefineResponse } from "./types.js";

export class ApiError extends Error {
  status: number;
  code: string;

  constructor(status: number, code: string, detail?: string) {
    super(detail ? `${code}: ${detail}` : code);
    this.status = status;
    this.code = code;
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const response = await fetch(url, init);
  const body = await response.json().catch(() => ({}));
  if (!response.ok) {
    throw new ApiError(response.status, (body as any).error ?? "unknown_error", (body as any).detail);
  }
  return body as T;
}

export class ApiClient {
  constructor(readonly base: string = "") {}

  createSession(): Promise<{ session_id: string }> {
    return request(`${this.base}/sessions`, { method: "POST" });
  }

  listItems(offset: number, limit: number): Promise<ItemsPage> {
    return request(`${this.base}/catalog/items?offset=${offset}&limit=${limit}`);
  }

  refine(
    sessionId: string,
    body: { anchor_item_id: string; text: string; k?: number },
  ): Promise<RefineResponse> {
    return request(`${this.base}/sessions/${sessionId}/refine`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  feedback(sessionId: string, itemId: string, verdict: "accept" | "reject"): Promise<unknown> {
    return request(`${this.base}/sessions/${sessionId}/feedback`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({ item_id: itemId, verdict }),
    });
  }

  memory(sessionId: string): Promise<MemoryResponse> {
    return request(`${this.base}/sessions/${sessionId}/memory`);
  }
}
