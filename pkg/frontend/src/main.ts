import { ApiClient } from "./api";
import { ConsoleApp } from "./app";
import "./styles.css";
import "katex/dist/katex.min.css";

const root = document.getElementById("app");
if (!root) throw new Error("missing #app mount point");

const app = new ConsoleApp(root, new ApiClient(""));
app.startQueuePolling();
