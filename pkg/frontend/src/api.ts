import type {
  AgreementResponse,
  LabelReply,
  LabelSubmission,
  QueueResponse,
  ServiceError,
  TrainJob,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly code: string;

  constructor(status: number, body: ServiceError) {
    super(body.error);
    this.status = status;
    this.code = body.code;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

/** Thin typed client over the service's JSON API. */
export class ApiClient {
  constructor(
    private readonly baseUrl: string = "",
    private readonly fetchImpl: FetchLike = (input, init) => fetch(input, init),
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const reply = await this.fetchImpl(this.baseUrl + path, init);
    const body = await reply.json();
    if (!reply.ok) {
      throw new ApiError(reply.status, body as ServiceError);
    }
    return body as T;
  }

  getQueue(limit: number, annotator: string): Promise<QueueResponse> {
    const params = new URLSearchParams({ limit: String(limit), annotator });
    return this.request<QueueResponse>(`/queue?${params}`);
  }

  postLabel(submission: LabelSubmission): Promise<LabelReply> {
    return this.request<LabelReply>("/labels", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(submission),
    });
  }

  getAgreement(): Promise<AgreementResponse> {
    return this.request<AgreementResponse>("/agreement");
  }

  postTrain(code: string | null, k: number): Promise<TrainJob> {
    return this.request<TrainJob>("/train", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(code ? { code, k } : { k }),
    });
  }

  getTrainStatus(jobId: string): Promise<TrainJob> {
    return this.request<TrainJob>(`/train/${jobId}`);
  }

  getHealth(): Promise<{ status: string; conversations: number; registry_version: string }> {
    return this.request("/healthz");
  }
}
