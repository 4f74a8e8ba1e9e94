import { ApiClient } from "./api.js";
import { SessionController } from "./session.js";
import { buildUi } from "./ui.js";

// Same-origin by default (the scene server can host this bundle directly);
// point elsewhere with ?api=http://host:port when served separately.
const base = new URLSearchParams(location.search).get("api") ?? "";
const session = new SessionController(new ApiClient(base));

buildUi(document.getElementById("app")!, session);
void session.connect();
