// App bootstrap: three panels over the engine HTTP API.

import { ApiClient } from "./api";
import { ChatPanel } from "./chat";
import { CorpusPanel } from "./corpus";
import { CitationViewer } from "./viewer";

const api = new ApiClient("");
const viewer = new CitationViewer(document.getElementById("viewer")!, api);
new ChatPanel(document.getElementById("chat")!, api, viewer);
const corpus = new CorpusPanel(document.getElementById("corpus")!, api);
corpus.refresh().catch((err) => console.warn("corpus refresh failed:", err));
