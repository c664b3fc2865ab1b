import { demoTrain } from './index.js';

const result = demoTrain({ seed: 7 });
console.log(`artifacts in ${result.dir}`);
