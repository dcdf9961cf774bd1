import katex from "katex";

// Questions and answers arrive as raw LaTeX-bearing text. Math segments
// ($...$ and $$...$$) render through KaTeX; anything KaTeX rejects falls
// back to the escaped source so rendering errors can never hide content
// (the raw-source toggle shows the exact payload regardless).

function escapeHtml(text: string): string {
  return text
    .replaceAll("&", "&amp;")
    .replaceAll("<", "&lt;")
    .replaceAll(">", "&gt;");
}

const MATH_SEGMENT = /\$\$([^$]+)\$\$|\$([^$\n]+)\$/g;

export function latexToHtml(text: string): string {
  let html = "";
  let cursor = 0;
  for (const match of text.matchAll(MATH_SEGMENT)) {
    html += escapeHtml(text.slice(cursor, match.index));
    const [whole, display, inline] = match;
    const source = display ?? inline ?? "";
    try {
      html += katex.renderToString(source, {
        displayMode: display !== undefined,
        throwOnError: true,
      });
    } catch {
      html += `<code class="latex-fallback">${escapeHtml(whole)}</code>`;
    }
    cursor = (match.index ?? 0) + whole.length;
  }
  html += escapeHtml(text.slice(cursor));
  return html;
}

/** Fill `el` with rendered LaTeX or, when `raw` is set, the exact source. */
export function renderLatexInto(el: HTMLElement, text: string, raw: boolean): void {
  if (raw) {
    el.textContent = text;
    return;
  }
  el.innerHTML = latexToHtml(text);
}
