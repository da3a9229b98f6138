import { ServiceClient } from './api';
import { Gallery } from './gallery';
import {
  colorizeMask,
  foregroundFromRgba,
  NEGATIVE_MARKER,
  POSITIVE_MARKER,
} from './overlay';
import { IDENTITY, imageToCanvas, panBy, zoomAround, type ViewTransform } from './transform';
import { SessionView } from './viewState';

const client = new ServiceClient('');
const gallery = new Gallery(client);

let view: SessionView | null = null;
let transform: ViewTransform = { ...IDENTITY };
let baseImage: ImageBitmap | null = null;
let maskLayer: HTMLCanvasElement | null = null;

const canvas = document.getElementById('viewport') as HTMLCanvasElement;
const ctx = canvas.getContext('2d')!;
const banner = document.getElementById('banner')!;
const polarityButton = document.getElementById('polarity') as HTMLButtonElement;
const opacitySlider = document.getElementById('opacity') as HTMLInputElement;
const undoButton = document.getElementById('undo') as HTMLButtonElement;
const acceptButton = document.getElementById('accept') as HTMLButtonElement;
const tagUsable = document.getElementById('tag-usable') as HTMLButtonElement;
const tagUnusable = document.getElementById('tag-unusable') as HTMLButtonElement;
const galleryList = document.getElementById('gallery')!;
const sessionLabel = document.getElementById('session-label')!;
const openForm = document.getElementById('open-form') as HTMLFormElement;

function showBanner(text: string): void {
  banner.textContent = text;
  banner.classList.remove('hidden');
}

banner.addEventListener('click', () => {
  banner.classList.add('hidden');
  view?.dismissBanner();
});

async function rebuildMaskLayer(): Promise<void> {
  if (!view || !view.maskBytes) {
    maskLayer = null;
    return;
  }
  const { width, height } = view.session;
  const bitmap = await createImageBitmap(
    new Blob([view.maskBytes.slice().buffer], { type: 'image/png' }));
  const decode = document.createElement('canvas');
  decode.width = width;
  decode.height = height;
  const dctx = decode.getContext('2d')!;
  dctx.drawImage(bitmap, 0, 0);
  const rgba = dctx.getImageData(0, 0, width, height).data;
  const overlay = colorizeMask(
    foregroundFromRgba(rgba, width, height), width, height,
    undefined, view.overlayOpacity);
  dctx.putImageData(new ImageData(new Uint8ClampedArray(overlay), width, height), 0, 0);
  maskLayer = decode;
}

function drawMarkers(): void {
  if (!view) return;
  for (const marker of view.markers) {
    const pos = imageToCanvas(transform, marker.x + 0.5, marker.y + 0.5);
    const [r, g, b] = marker.polarity === 'positive' ? POSITIVE_MARKER : NEGATIVE_MARKER;
    ctx.beginPath();
    ctx.arc(pos.x, pos.y, 5, 0, Math.PI * 2);
    ctx.strokeStyle = `rgb(${r},${g},${b})`;
    ctx.lineWidth = 2;
    if (marker.pending) {
      ctx.stroke();
    } else {
      ctx.fillStyle = `rgb(${r},${g},${b})`;
      ctx.fill();
    }
  }
}

function render(): void {
  ctx.clearRect(0, 0, canvas.width, canvas.height);
  if (!baseImage) return;
  ctx.save();
  ctx.imageSmoothingEnabled = transform.zoom < 1;
  ctx.setTransform(transform.zoom, 0, 0, transform.zoom, transform.panX, transform.panY);
  ctx.drawImage(baseImage, 0, 0);
  if (maskLayer) ctx.drawImage(maskLayer, 0, 0);
  ctx.restore();
  drawMarkers();
  if (view?.banner && !view.banner.dismissed) showBanner(view.banner.text);
  polarityButton.textContent = view ? `polarity: ${view.pendingPolarity}` : 'polarity';
  const readOnly = !view || view.readOnly;
  for (const button of [undoButton, acceptButton, tagUsable, tagUnusable, polarityButton]) {
    button.disabled = readOnly;
  }
  sessionLabel.textContent = view
    ? `${view.session.session_id} (${view.session.status}, v${view.maskVersion})`
    : 'no session';
}

async function onViewChanged(): Promise<void> {
  await rebuildMaskLayer();
  render();
}

async function openSession(sessionId: string): Promise<void> {
  const summary = await client.getSession(sessionId);
  view = new SessionView(client, summary, () => {
    void onViewChanged();
  });
  transform = { ...IDENTITY };
  baseImage = await createImageBitmap(
    await (await fetch(client.imageUrl(summary.image_id))).blob());
  view.maskBytes = await client.fetchMask(summary.session_id, summary.mask_version);
  await onViewChanged();
}

async function reloadGallery(): Promise<void> {
  try {
    const rows = await gallery.reload();
    galleryList.replaceChildren(
      ...rows.map((row) => {
        const item = document.createElement('li');
        const thumb = document.createElement('img');
        thumb.src = row.thumbnailUrl;
        thumb.width = 64;
        const label = document.createElement('span');
        label.textContent =
          `${row.session.image_id} [${row.session.status}` +
          `${row.session.usability_tag ? ', ' + row.session.usability_tag : ''}]`;
        item.append(thumb, label);
        item.addEventListener('click', () => {
          void openSession(row.session.session_id);
        });
        return item;
      }),
    );
  } catch (err) {
    showBanner(`gallery unavailable: ${err instanceof Error ? err.message : err}`);
  }
}

// --- viewport interaction ------------------------------------------

let dragging = false;
let dragMoved = false;
let lastPointer = { x: 0, y: 0 };

canvas.addEventListener('mousedown', (ev) => {
  dragging = true;
  dragMoved = false;
  lastPointer = { x: ev.offsetX, y: ev.offsetY };
});

canvas.addEventListener('mousemove', (ev) => {
  if (!dragging) return;
  const dx = ev.offsetX - lastPointer.x;
  const dy = ev.offsetY - lastPointer.y;
  if (Math.abs(dx) + Math.abs(dy) > 2) dragMoved = true;
  if (dragMoved) {
    transform = panBy(transform, dx, dy);
    lastPointer = { x: ev.offsetX, y: ev.offsetY };
    render();
  }
});

canvas.addEventListener('mouseup', (ev) => {
  dragging = false;
  if (dragMoved || !view) return;
  // modifier-click sends the opposite polarity (see legend)
  void view.clickToPrompt(ev.offsetX, ev.offsetY, transform, ev.altKey || ev.shiftKey);
});

canvas.addEventListener('wheel', (ev) => {
  ev.preventDefault();
  transform = zoomAround(transform, ev.offsetX, ev.offsetY, ev.deltaY < 0 ? 1.2 : 1 / 1.2);
  render();
});

polarityButton.addEventListener('click', () => view?.togglePolarity());
opacitySlider.addEventListener('input', () => {
  view?.setOpacity(Number(opacitySlider.value) / 100);
});
undoButton.addEventListener('click', () => void view?.undo());
acceptButton.addEventListener('click', async () => {
  if (view && (await view.accept())) await reloadGallery();
});
tagUsable.addEventListener('click', async () => {
  if (view && (await view.tag('usable'))) await reloadGallery();
});
tagUnusable.addEventListener('click', async () => {
  if (view && (await view.tag('unusable'))) await reloadGallery();
});
openForm.addEventListener('submit', async (ev) => {
  ev.preventDefault();
  const data = new FormData(openForm);
  const imageId = String(data.get('image_id') ?? '').trim();
  const seed = String(data.get('seed') ?? 'empty').trim() || 'empty';
  if (!imageId) return;
  try {
    const summary = await client.openSession(imageId, seed);
    await reloadGallery();
    await openSession(summary.session_id);
  } catch (err) {
    showBanner(err instanceof Error ? err.message : String(err));
  }
});

void reloadGallery();
render();
