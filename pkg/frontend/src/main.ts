/** Browser entry point; the API is served from the same origin. */

import { ReviewApi } from "./api.js";
import { mount } from "./app.js";

const root = document.getElementById("app");
if (root instanceof HTMLElement) {
  void mount(root, new ReviewApi(""));
}
