// Fixed-interval poller that tolerates overlapping responses: each request
// carries a sequence number and anything older than the newest applied
// response is dropped.

export class SequencedPoller<T> {
  private timer: ReturnType<typeof setInterval> | null = null;
  private nextSeq = 0;
  private lastApplied = -1;

  constructor(
    private fetchFn: () => Promise<T>,
    private onData: (data: T) => void,
    private onError: (err: unknown) => void = () => {},
    public intervalMs = 2000,
  ) {}

  start(): void {
    if (this.timer !== null) return;
    void this.pollOnce();
    this.timer = setInterval(() => void this.pollOnce(), this.intervalMs);
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }

  get running(): boolean {
    return this.timer !== null;
  }

  async pollOnce(): Promise<void> {
    const seq = this.nextSeq++;
    try {
      const data = await this.fetchFn();
      if (seq > this.lastApplied) {
        this.lastApplied = seq;
        this.onData(data);
      }
    } catch (err) {
      if (seq > this.lastApplied) {
        this.onError(err);
      }
    }
  }
}
