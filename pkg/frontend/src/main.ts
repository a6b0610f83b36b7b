/**
 * Browser bootstrap: login, document picker, reading view. Served by the
 * server binary as a static bundle (see README for the build step).
 */

import { CareClient, Transport } from "./client.js";
import { Viewer } from "./viewer.js";

function wsTransport(url: string): Transport {
  const socket = new WebSocket(url);
  let handler: (data: string) => void = () => undefined;
  socket.onmessage = (event) => handler(String(event.data));
  return {
    send: (data) => socket.send(data),
    close: () => socket.close(),
    onMessage: (h) => {
      handler = h;
    },
  };
}

async function listDocuments(base: string, username: string, password: string) {
  const response = await fetch(`${base}/documents`, {
    headers: { Authorization: "Basic " + btoa(`${username}:${password}`) },
  });
  if (!response.ok) throw new Error(`documents: ${response.status}`);
  return (await response.json()) as { id: string; title: string }[];
}

async function fetchText(base: string, username: string, password: string, id: string) {
  const response = await fetch(`${base}/documents/${id}/text`, {
    headers: { Authorization: "Basic " + btoa(`${username}:${password}`) },
  });
  if (!response.ok) throw new Error(`text: ${response.status}`);
  return (await response.json()) as { pages: string[] };
}

async function start(): Promise<void> {
  const base = window.location.origin;
  const username = prompt("username") ?? "";
  const password = prompt("password") ?? "";

  const socket = wsTransport(base.replace(/^http/, "ws") + "/ws");
  const client = new CareClient(socket);
  await client.hello();
  await client.login(username, password);

  const docs = await listDocuments(base, username, password);
  if (docs.length === 0) {
    document.body.textContent = "No documents available.";
    return;
  }
  const picked = docs[0];
  const { pages } = await fetchText(base, username, password, picked.id);

  document.body.innerHTML = `
    <header><h1>${picked.title}</h1>
      <label>order <select id="order">
        <option value="position">text position</option>
        <option value="time">creation time</option>
        <option value="author">author</option>
      </select></label>
      <button id="comment">comment selection</button>
    </header>
    <main><section id="pages"></section><aside id="sidebar"></aside></main>`;

  const viewer = new Viewer(client, {
    pagesHost: document.querySelector("#pages")!,
    sidebarHost: document.querySelector("#sidebar")!,
    orderSelect: document.querySelector("#order")!,
  });

  await client.subscribe(picked.id);
  viewer.open(picked.id, pages);

  document.querySelector("#comment")!.addEventListener("click", async () => {
    const selectors = viewer.selectionToSelectors();
    if (!selectors) return;
    client.behavior.emit("text_selection", picked.id, {});
    const note = prompt("note (optional)") || null;
    await client.createCommentary({ selectors, text: note });
  });

  window.addEventListener("beforeunload", () => client.close());
}

start().catch((err) => {
  document.body.textContent = `failed to start: ${err}`;
});
