import type { ServiceClient } from './api';
import type { Marker, Polarity, SessionSummary } from './types';
import { PromptQueue } from './promptQueue';
import { canvasToPixel, type ViewTransform } from './transform';
import { DEFAULT_OPACITY } from './overlay';

export interface BannerMessage {
  text: string;
  dismissed: boolean;
}

/** Client-side state of one refinement session view.
 *
 * Invariants kept here: `maskVersion` always equals the last version the
 * server acknowledged, markers correspond one to one with prompts that
 * were actually sent (optimistic markers are rolled back on failure),
 * and mask bytes are only ever replaced wholesale by a server fetch.
 */
export class SessionView {
  readonly session: SessionSummary;
  maskVersion: number;
  pendingPolarity: Polarity = 'positive';
  overlayOpacity = DEFAULT_OPACITY;
  markers: Marker[] = [];
  banner: BannerMessage | null = null;
  /** raw bytes of the displayed mask, exactly as served */
  maskBytes: Uint8Array | null = null;

  private readonly client: ServiceClient;
  private readonly queue = new PromptQueue();
  private readonly onChange: () => void;

  constructor(client: ServiceClient, session: SessionSummary, onChange: () => void = () => {}) {
    this.client = client;
    this.session = session;
    this.maskVersion = session.mask_version;
    this.onChange = onChange;
  }

  get readOnly(): boolean {
    return this.session.status !== 'active';
  }

  get inFlight(): number {
    return this.queue.size;
  }

  togglePolarity(): void {
    this.pendingPolarity = this.pendingPolarity === 'positive' ? 'negative' : 'positive';
    this.onChange();
  }

  setOpacity(opacity: number): void {
    this.overlayOpacity = Math.min(1, Math.max(0, opacity));
    this.onChange();
  }

  dismissBanner(): void {
    if (this.banner) this.banner.dismissed = true;
    this.onChange();
  }

  private fail(message: string): void {
    this.banner = { text: message, dismissed: false };
    this.onChange();
  }

  private async refreshMask(): Promise<void> {
    this.maskBytes = await this.client.fetchMask(this.session.session_id, this.maskVersion);
    this.onChange();
  }

  /** Map a canvas click through the view transform and send it as a
   * prompt. Clicks outside the image are ignored. A modifier click
   * inverts the pending polarity for that one prompt. */
  clickToPrompt(
    canvasX: number,
    canvasY: number,
    transform: ViewTransform,
    invertPolarity = false,
  ): Promise<number | null> {
    const pixel = canvasToPixel(
      transform, canvasX, canvasY, this.session.width, this.session.height);
    if (pixel === null) return Promise.resolve(null);
    let polarity = this.pendingPolarity;
    if (invertPolarity) polarity = polarity === 'positive' ? 'negative' : 'positive';
    return this.sendPoint(pixel.x, pixel.y, polarity);
  }

  /** Queue one prompt; resolves with the acknowledged mask version, or
   * null after a rollback. */
  sendPoint(x: number, y: number, polarity: Polarity): Promise<number | null> {
    if (this.readOnly) {
      this.fail('session is read-only');
      return Promise.resolve(null);
    }
    const marker: Marker = { x, y, polarity, pending: true };
    this.markers.push(marker);
    this.onChange();
    return this.queue.enqueue(async () => {
      try {
        const ack = await this.client.postPoint(this.session.session_id, x, y, polarity);
        marker.pending = false;
        this.maskVersion = ack.mask_version;
        await this.refreshMask();
        return ack.mask_version;
      } catch (err) {
        this.markers.splice(this.markers.indexOf(marker), 1);
        this.fail(err instanceof Error ? err.message : String(err));
        return null;
      }
    });
  }

  undo(): Promise<number | null> {
    if (this.readOnly) {
      this.fail('session is read-only');
      return Promise.resolve(null);
    }
    return this.queue.enqueue(async () => {
      try {
        const ack = await this.client.undo(this.session.session_id);
        this.maskVersion = ack.mask_version;
        if (this.markers.length) this.markers.pop();
        await this.refreshMask();
        return ack.mask_version;
      } catch (err) {
        this.fail(err instanceof Error ? err.message : String(err));
        return null;
      }
    });
  }

  async accept(): Promise<boolean> {
    try {
      await this.client.accept(this.session.session_id);
      this.session.status = 'accepted';
      this.onChange();
      return true;
    } catch (err) {
      this.fail(err instanceof Error ? err.message : String(err));
      return false;
    }
  }

  async tag(tag: 'usable' | 'unusable'): Promise<boolean> {
    try {
      await this.client.tagSession(this.session.session_id, tag);
      this.session.usability_tag = tag;
      this.onChange();
      return true;
    } catch (err) {
      this.fail(err instanceof Error ? err.message : String(err));
      return false;
    }
  }
}
