/** Serializes prompt submissions so only one request per session is in
 * flight; later clicks wait for earlier acknowledgments, preserving the
 * server-side history order. */
export class PromptQueue {
  private chain: Promise<unknown> = Promise.resolve();
  private pending = 0;

  get size(): number {
    return this.pending;
  }

  enqueue<T>(task: () => Promise<T>): Promise<T> {
    this.pending += 1;
    const run = this.chain.then(task);
    // keep the chain alive whether or not the task failed
    this.chain = run.then(
      () => undefined,
      () => undefined,
    );
    return run.finally(() => {
      this.pending -= 1;
    });
  }
}
