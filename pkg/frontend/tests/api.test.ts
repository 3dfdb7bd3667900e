import { afterEach, describe, expect, it, vi } from "vitest";

import { ApiClient, ApiError } from "../src/api.js";

afterEach(() => {
  vi.unstubAllGlobals();
});

function stubFetch(status: number, body: unknown): void {
  vi.stubGlobal("fetch", async () => ({
    ok: status >= 200 && status < 300,
    status,
    json: async () => body,
  }));
}

describe("api client error mapping", () => {
  it("maps 4xx bodies to typed ApiError with the server code", async () => {
    stubFetch(404, { error: "unknown_item" });
    const client = new ApiClient("http://test");
    await expect(client.refine("sid", { anchor_item_id: "x", text: "darker" })).rejects.toMatchObject(
      { status: 404, code: "unknown_item" },
    );
  });

  it("keeps the violated-field detail when present", async () => {
    stubFetch(400, { error: "empty_text", detail: "text must be non-empty" });
    const client = new ApiClient("http://test");
    const error = await client
      .refine("sid", { anchor_item_id: "x", text: "" })
      .catch((e: unknown) => e);
    expect(error).toBeInstanceOf(ApiError);
    expect((error as ApiError).message).toContain("empty_text");
    expect((error as ApiError).message).toContain("non-empty");
  });

  it("propagates network failures untyped so the UI offers a retry", async () => {
    vi.stubGlobal("fetch", async () => {
      throw new TypeError("fetch failed");
    });
    const client = new ApiClient("http://test");
    const error = await client.memory("sid").catch((e: unknown) => e);
    expect(error).toBeInstanceOf(TypeError);
    expect(error).not.toBeInstanceOf(ApiError);
  });
});
