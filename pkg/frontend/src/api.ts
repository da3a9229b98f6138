import type {
  ApiErrorBody,
  PointAck,
  Polarity,
  SessionSummary,
  UsabilityTag,
} from './types';

export class ServiceError extends Error {
  readonly code: string;
  readonly status: number;

  constructor(status: number, body: ApiErrorBody) {
    super(body.message);
    this.code = body.code;
    this.status = status;
  }
}

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

const RETRY_ATTEMPTS = 3;
const RETRY_BASE_MS = 150;

async function parseError(resp: Response): Promise<ServiceError> {
  let body: ApiErrorBody = { code: 'unknown', message: `HTTP ${resp.status}` };
  try {
    body = (await resp.json()) as ApiErrorBody;
  } catch {
    // non-JSON error body; keep the fallback
  }
  return new ServiceError(resp.status, body);
}

/** Typed client for the refinement service.
 *
 * Reads (GETs) are retried with exponential backoff and surfaced after
 * three failed attempts; prompt posts are never retried, the caller
 * rolls its optimistic marker back instead.
 */
export class ServiceClient {
  private readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;
  private readonly delay: (ms: number) => Promise<void>;

  constructor(
    baseUrl = '',
    fetchImpl: FetchLike = (url, init) => fetch(url, init),
    delay: (ms: number) => Promise<void> = (ms) =>
      new Promise((resolve) => setTimeout(resolve, ms)),
  ) {
    this.baseUrl = baseUrl.replace(/\/$/, '');
    this.fetchImpl = fetchImpl;
    this.delay = delay;
  }

  private async getWithRetry(path: string): Promise<Response> {
    let lastError: unknown;
    for (let attempt = 0; attempt < RETRY_ATTEMPTS; attempt++) {
      if (attempt > 0) await this.delay(RETRY_BASE_MS * 2 ** (attempt - 1));
      try {
        const resp = await this.fetchImpl(this.baseUrl + path);
        if (resp.ok) return resp;
        if (resp.status >= 500) {
          lastError = await parseError(resp);
          continue;
        }
        throw await parseError(resp);
      } catch (err) {
        if (err instanceof ServiceError) throw err;
        lastError = err; // network failure: retry
      }
    }
    throw lastError instanceof Error ? lastError : new Error(String(lastError));
  }

  private async post<T>(path: string, body?: unknown): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path, {
      method: 'POST',
      headers: { 'content-type': 'application/json' },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    if (!resp.ok) throw await parseError(resp);
    return (await resp.json()) as T;
  }

  openSession(imageId: string, seed = 'empty'): Promise<SessionSummary> {
    return this.post('/sessions', { image_id: imageId, seed });
  }

  async listSessions(tag?: UsabilityTag): Promise<SessionSummary[]> {
    const query = tag ? `?tag=${encodeURIComponent(tag)}` : '';
    const resp = await this.getWithRetry(`/sessions${query}`);
    return (await resp.json()) as SessionSummary[];
  }

  async getSession(sessionId: string): Promise<SessionSummary> {
    const resp = await this.getWithRetry(`/sessions/${sessionId}`);
    return (await resp.json()) as SessionSummary;
  }

  postPoint(sessionId: string, x: number, y: number, polarity: Polarity): Promise<PointAck> {
    return this.post(`/sessions/${sessionId}/points`, { x, y, polarity });
  }

  undo(sessionId: string): Promise<PointAck> {
    return this.post(`/sessions/${sessionId}/undo`);
  }

  accept(sessionId: string): Promise<{ status: string }> {
    return this.post(`/sessions/${sessionId}/accept`);
  }

  tagSession(sessionId: string, tag: UsabilityTag): Promise<{ usability_tag: UsabilityTag }> {
    return this.post(`/sessions/${sessionId}/tag`, { tag });
  }

  maskUrl(sessionId: string, version?: number): string {
    const query = version === undefined ? '' : `?version=${version}`;
    return `${this.baseUrl}/sessions/${sessionId}/mask${query}`;
  }

  imageUrl(imageId: string): string {
    return `${this.baseUrl}/images/${encodeURIComponent(imageId)}`;
  }

  /** Raw PNG bytes of a mask version; the UI never alters them. */
  async fetchMask(sessionId: string, version?: number): Promise<Uint8Array> {
    const resp = await this.getWithRetry(
      `/sessions/${sessionId}/mask${version === undefined ? '' : `?version=${version}`}`,
    );
    return new Uint8Array(await resp.arrayBuffer());
  }
}
