import type { DriftLabel, ItemDetail, ItemEvent, ItemSummary, VerdictAck } from "./types";

export class ApiError extends Error {
  constructor(
    message: string,
    public readonly status: number,
  ) {
    super(message);
  }
}

/** The item left AwaitingVerdict before this submission arrived. */
export class ConflictError extends ApiError {
  constructor(message: string) {
    super(message, 409);
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    let response: Response;
    try {
      response = await this.fetchImpl(this.baseUrl + path, init);
    } catch (err) {
      throw new ApiError(`service unreachable: ${String(err)}`, 0);
    }
    if (response.status === 409) {
      const detail = await response.text();
      throw new ConflictError(detail);
    }
    if (!response.ok) {
      throw new ApiError(`HTTP ${response.status} for ${path}`, response.status);
    }
    return (await response.json()) as T;
  }

  listItems(): Promise<ItemSummary[]> {
    return this.request<ItemSummary[]>("/api/v1/items");
  }

  getItem(id: string): Promise<ItemDetail> {
    return this.request<ItemDetail>(`/api/v1/items/${encodeURIComponent(id)}`);
  }

  /** Binary expert verdict; immutable once acknowledged (server enforces CAS). */
  submitVerdict(id: string, aligned: 0 | 1, comment = ""): Promise<VerdictAck> {
    return this.request<VerdictAck>(`/api/v1/items/${encodeURIComponent(id)}/verdict`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify({ aligned, comment }),
    });
  }

  saveDriftLabels(id: string, labels: DriftLabel[]): Promise<{ drift: DriftLabel[] }> {
    return this.request<{ drift: DriftLabel[] }>(
      `/api/v1/items/${encodeURIComponent(id)}/drift`,
      {
        method: "POST",
        headers: { "Content-Type": "application/json" },
        body: JSON.stringify({ labels }),
      },
    );
  }

  fetchEvents(id: string, after = 0): Promise<{ events: ItemEvent[] }> {
    return this.request<{ events: ItemEvent[] }>(
      `/api/v1/items/${encodeURIComponent(id)}/events?after=${after}`,
    );
  }

  listTraces(): Promise<{ traces: string[] }> {
    return this.request<{ traces: string[] }>("/api/v1/traces");
  }

  async fetchTrace(name: string): Promise<string> {
    const response = await this.fetchImpl(
      `${this.baseUrl}/api/v1/traces/${encodeURIComponent(name)}`,
    );
    if (!response.ok) throw new ApiError(`HTTP ${response.status}`, response.status);
    return response.text();
  }
}
