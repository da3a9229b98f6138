import type { ServiceClient } from './api';
import type { SessionSummary, UsabilityTag } from './types';

export interface GalleryRow {
  session: SessionSummary;
  thumbnailUrl: string;
  maskUrl: string;
  readOnly: boolean;
}

/** Gallery data: session list with thumbnails and tags. Listing rides on
 * the client's retry-with-backoff GETs; a failure after three attempts
 * surfaces through the returned promise. */
export class Gallery {
  private readonly client: ServiceClient;
  rows: GalleryRow[] = [];
  filter: UsabilityTag | undefined;

  constructor(client: ServiceClient) {
    this.client = client;
  }

  async reload(tag?: UsabilityTag): Promise<GalleryRow[]> {
    this.filter = tag;
    const sessions = await this.client.listSessions(tag);
    this.rows = sessions.map((session) => ({
      session,
      thumbnailUrl: this.client.imageUrl(session.image_id),
      maskUrl: this.client.maskUrl(session.session_id, session.mask_version),
      readOnly: session.status !== 'active',
    }));
    return this.rows;
  }

  async tag(sessionId: string, tag: UsabilityTag): Promise<void> {
    await this.client.tagSession(sessionId, tag);
    const row = this.rows.find((r) => r.session.session_id === sessionId);
    if (row) row.session.usability_tag = tag;
  }
}
