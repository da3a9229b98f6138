import { describe, expect, it } from 'vitest';

import { ServiceClient, type FetchLike } from './api';
import { Gallery } from './gallery';
import type { SessionSummary } from './types';

const noDelay = async () => {};

const SESSIONS: SessionSummary[] = [
  {
    session_id: 'a1', image_id: 'sheet1', status: 'active',
    usability_tag: null, mask_version: 2, width: 100, height: 80,
  },
  {
    session_id: 'b2', image_id: 'sheet2', status: 'accepted',
    usability_tag: 'usable', mask_version: 5, width: 100, height: 80,
  },
];

function fakeService(): { fetch: FetchLike; urls: string[]; tagged: string[] } {
  const urls: string[] = [];
  const tagged: string[] = [];
  const fetchImpl: FetchLike = async (url, init) => {
    urls.push(url);
    if (url.startsWith('/sessions?tag=')) {
      const tag = url.split('=')[1];
      return new Response(
        JSON.stringify(SESSIONS.filter((s) => s.usability_tag === tag)),
        { status: 200 });
    }
    if (url === '/sessions') {
      return new Response(JSON.stringify(SESSIONS), { status: 200 });
    }
    if (init?.method === 'POST' && url.endsWith('/tag')) {
      tagged.push(url);
      return new Response(JSON.stringify({ usability_tag: 'unusable' }), { status: 200 });
    }
    return new Response(JSON.stringify({ code: 'not_found', message: url }), { status: 404 });
  };
  return { fetch: fetchImpl, urls, tagged };
}

describe('Gallery', () => {
  it('lists sessions with thumbnail and mask urls', async () => {
    const service = fakeService();
    const gallery = new Gallery(new ServiceClient('', service.fetch, noDelay));
    const rows = await gallery.reload();
    expect(rows).toHaveLength(2);
    expect(rows[0].thumbnailUrl).toBe('/images/sheet1');
    expect(rows[0].maskUrl).toBe('/sessions/a1/mask?version=2');
    expect(rows[0].readOnly).toBe(false);
    expect(rows[1].readOnly).toBe(true); // accepted sessions are read-only
  });

  it('filters by usability tag', async () => {
    const service = fakeService();
    const gallery = new Gallery(new ServiceClient('', service.fetch, noDelay));
    const rows = await gallery.reload('usable');
    expect(rows.map((r) => r.session.session_id)).toEqual(['b2']);
  });

  it('tagging updates the cached row', async () => {
    const service = fakeService();
    const gallery = new Gallery(new ServiceClient('', service.fetch, noDelay));
    await gallery.reload();
    await gallery.tag('a1', 'unusable');
    expect(service.tagged).toEqual(['/sessions/a1/tag']);
    expect(gallery.rows[0].session.usability_tag).toBe('unusable');
  });

  it('surfaces listing failures after the retries are exhausted', async () => {
    let calls = 0;
    const dead: FetchLike = async () => {
      calls += 1;
      throw new TypeError('network down');
    };
    const gallery = new Gallery(new ServiceClient('', dead, noDelay));
    await expect(gallery.reload()).rejects.toThrow('network down');
    expect(calls).toBe(3);
  });
});
