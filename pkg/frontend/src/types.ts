export type Polarity = 'positive' | 'negative';

export type UsabilityTag = 'usable' | 'unusable';

export interface SessionSummary {
  session_id: string;
  image_id: string;
  status: 'active' | 'accepted' | 'discarded';
  usability_tag: UsabilityTag | null;
  mask_version: number;
  width: number;
  height: number;
}

export interface PointAck {
  mask_version: number;
}

export interface ApiErrorBody {
  code: string;
  message: string;
}

export interface Marker {
  x: number;
  y: number;
  polarity: Polarity;
  /** true until the server has acknowledged the prompt */
  pending: boolean;
}
