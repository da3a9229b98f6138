/** Live integration check: drives a running service through the same
 * client modules the UI uses (no browser involved). Build and run:
 *
 *   npm run build:integration
 *   node dist/integration.mjs http://127.0.0.1:8077 <image_id>
 */
import { ServiceClient } from './api';
import { SessionView } from './viewState';

async function run(): Promise<number> {
  const [base, imageId] = process.argv.slice(2);
  if (!base || !imageId) {
    console.error('usage: node dist/integration.mjs <service-url> <image_id>');
    return 2;
  }

  const client = new ServiceClient(base);
  const summary = await client.openSession(imageId, 'empty');
  console.log(`opened session ${summary.session_id} (${summary.width}x${summary.height})`);

  const view = new SessionView(client, summary);
  const cx = Math.floor(summary.width / 2);
  const cy = Math.floor(summary.height / 2);
  const version = await view.sendPoint(cx, cy, 'positive');
  if (version === null || view.banner) {
    console.error('prompt failed:', view.banner?.text);
    return 1;
  }
  const served = await client.fetchMask(summary.session_id, view.maskVersion);
  const mine = view.maskBytes;
  const matches =
    mine !== null &&
    served.length === mine.length &&
    served.every((byte, i) => byte === mine[i]);
  console.log(`version ${version}; overlay bytes match served mask: ${matches}`);

  await view.undo();
  console.log(`after undo: version ${view.maskVersion}`);
  await view.tag('usable');
  const tagged = await client.listSessions('usable');
  const listed = tagged.some((s) => s.session_id === summary.session_id);
  console.log(`listed under tag 'usable': ${listed}`);
  return matches && listed ? 0 : 1;
}

run().then(
  (code) => process.exit(code),
  (err) => {
    console.error(err);
    process.exit(1);
  },
);
